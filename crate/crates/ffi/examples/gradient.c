/* Gradient of one episode through the C ABI. */
#include <stdio.h>
#include <stdlib.h>

#include "deep_eprop.h"

static const char *SPEC =
    "{\"topology\": \"chain\", \"input_dim\": 1, \"readout_dim\": 1,"
    " \"layers\": [{\"hidden_dim\": 3, \"activation\": \"tanh\"},"
    "              {\"hidden_dim\": 3, \"activation\": \"tanh\"}],"
    " \"tracked_groups\": [\"all\"], \"seed\": 1}";

static int report(DeStatus s, const char *what) {
    if (s == DE_STATUS_OK) return 0;
    fprintf(stderr, "%s failed (%d): %s\n", what, (int)s, de_last_error_message());
    return 1;
}

int main(void) {
    DeNetwork *net = NULL;
    DeParams *params = NULL;
    if (report(de_network_from_spec_json(SPEC, &net), "spec")) return 1;
    if (report(de_params_init(net, de_network_spec_seed(net), &params), "init")) return 1;

    double inputs[4] = {0.5, -1.0, 0.25, 1.0};
    double target[1] = {0.3};
    size_t n = de_network_param_count(net);
    double *exact = malloc(n * sizeof *exact);
    double *approx = malloc(n * sizeof *approx);
    double loss = 0.0;
    if (report(de_gradient(net, params, "deep_rtrl", NULL, inputs, 4, target, 1, exact, n, &loss), "deep_rtrl"))
        return 1;
    if (report(de_gradient(net, params, "deep_eprop", NULL, inputs, 4, target, 1, approx, n, NULL), "deep_eprop"))
        return 1;

    double dot = 0.0, ee = 0.0, aa = 0.0;
    for (size_t i = 0; i < n; i++) {
        dot += exact[i] * approx[i];
        ee += exact[i] * exact[i];
        aa += approx[i] * approx[i];
    }
    printf("params %zu loss %.6f dot %.6f |exact|^2 %.6f |approx|^2 %.6f\n", n, loss, dot, ee, aa);

    free(exact);
    free(approx);
    de_params_free(params);
    de_network_free(net);
    return 0;
}
