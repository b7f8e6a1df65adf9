#ifndef DEEP_EPROP_H
#define DEEP_EPROP_H

#include <stddef.h>
#include <stdint.h>

typedef enum DeStatus {
  DE_STATUS_OK = 0,
  DE_STATUS_NULL_POINTER = 1,
  DE_STATUS_INVALID_UTF8 = 2,
  DE_STATUS_PARSE = 3,
  DE_STATUS_VALIDATION = 4,
  DE_STATUS_ARGUMENT = 5,
  DE_STATUS_SHAPE = 6,
  DE_STATUS_RESOURCE_LIMIT = 7,
  DE_STATUS_BUFFER_SIZE = 8,
  DE_STATUS_INTERNAL = 9,
  DE_STATUS_PANIC = 10,
} DeStatus;

// A validated network together with the seed its spec names.
typedef struct DeNetwork DeNetwork;

typedef struct DeParams DeParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null if it succeeded.
// The pointer stays valid until the next call into this library on the
// same thread.
const char *de_last_error_message(void);

// Parses and validates a JSON network spec.
//
// # Safety
// `json` must be a NUL-terminated string and `out` a writable pointer.
// On success `*out` owns a handle to release with [`de_network_free`].
enum DeStatus de_network_from_spec_json(const char *json, struct DeNetwork **out);

// # Safety
// `net` must be null or a handle from [`de_network_from_spec_json`] not yet freed.
void de_network_free(struct DeNetwork *net);

// # Safety
// `net` must be a live network handle.
size_t de_network_input_dim(const struct DeNetwork *net);

// # Safety
// `net` must be a live network handle.
size_t de_network_readout_dim(const struct DeNetwork *net);

// Total number of scalar parameters, the length of every parameter and
// gradient buffer for this network.
//
// # Safety
// `net` must be a live network handle.
size_t de_network_param_count(const struct DeNetwork *net);

// The seed named in the spec.
//
// # Safety
// `net` must be a live network handle.
uint64_t de_network_spec_seed(const struct DeNetwork *net);

// Draws initial parameters for `net` from `seed`.
//
// # Safety
// `net` must be a live network handle and `out` writable. On success
// `*out` owns a handle to release with [`de_params_free`].
enum DeStatus de_params_init(const struct DeNetwork *net, uint64_t seed, struct DeParams **out);

// # Safety
// `params` must be null or a handle from [`de_params_init`] not yet freed.
void de_params_free(struct DeParams *params);

// Copies all parameters into `buf`, which must hold exactly
// [`de_network_param_count`] values.
//
// # Safety
// `params` must be a live handle and `buf` valid for `len` writes.
enum DeStatus de_params_read(const struct DeParams *params, double *buf, size_t len);

// Overwrites all parameters from `buf`, laid out as in [`de_params_read`].
//
// # Safety
// `net` and `params` must be live handles, `params` created for `net`, and
// `buf` valid for `len` reads.
enum DeStatus de_params_write(const struct DeNetwork *net,
                              struct DeParams *params,
                              const double *buf,
                              size_t len);

// Gradient of the episode loss under `algorithm`, written to `grad` in the
// parameter layout. Groups the network does not track are zero.
//
// `algorithm` is one of `bptt`, `rtrl`, `deep_rtrl`, `eprop`, `deep_eprop`.
// `trace_mode` is `diag_everywhere`, `diag_home_dense_above`, or null for
// the spec's mode. `inputs` holds `steps` rows of the input width;
// `targets` holds `target_rows` rows of the readout width, one per step or
// a single row when the loss is final-only. `loss` may be null.
//
// # Safety
// Handles must be live and `params` created for `net`. Buffers must be
// valid for the lengths implied above and `grad` for `grad_len` writes.
enum DeStatus de_gradient(const struct DeNetwork *net,
                          const struct DeParams *params,
                          const char *algorithm,
                          const char *trace_mode,
                          const double *inputs,
                          size_t steps,
                          const double *targets,
                          size_t target_rows,
                          double *grad,
                          size_t grad_len,
                          double *loss);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DEEP_EPROP_H */
