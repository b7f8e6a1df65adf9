use crate::error::Result;
use crate::linalg::OpCounter;
use crate::network::{Network, Params};
use crate::oracles::GradientSet;

/// Reverse-mode gradient of the total loss for every tracked group.
///
/// Keeps the full rollout in memory; its size is reported through
/// `ops.stored_activation_values`.
pub fn bptt_gradient(
    net: &Network,
    params: &Params,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    ops: &mut OpCounter,
) -> Result<GradientSet> {
    let record = net.rollout(params, inputs, targets)?;
    let horizon = record.len();
    let per_step = net.input_dim + 2 * net.state_size() + net.readout_dim;
    ops.observe_stored_activations((horizon * per_step) as u64);
    // Adjoints held at once: dL/dh for this step plus the carry into the previous one.
    ops.observe_trace_values(2 * net.state_size() as u64);

    let nodes = net.nodes();
    let out = net.output_node();
    let zeros = net.zero_states();
    let mut grads: Vec<_> = net
        .groups()
        .iter()
        .map(|g| crate::linalg::Matrix::zeros(g.rows, g.cols))
        .collect();
    // dL/dh^n_{t} contributed through the recurrence from step t+1.
    let mut carry = net.zero_states();

    for t in (0..horizon).rev() {
        let step = &record.steps[t];
        let prev = if t == 0 {
            &zeros
        } else {
            &record.steps[t - 1].states
        };
        let x = &record.inputs[t];
        let mut dh = std::mem::replace(&mut carry, net.zero_states());

        if let Some(target) = net.target_at(targets, t, horizon) {
            let err: Vec<f64> = record.outputs[t]
                .iter()
                .zip(target)
                .map(|(y, y_star)| y - y_star)
                .collect();
            let w_out = params.at(net.readout_group());
            let back = w_out.t_matvec(&err)?;
            ops.add_flops(2 * w_out.len() as u64);
            for (a, b) in dh[out].iter_mut().zip(&back) {
                *a += b;
            }
            grads[net.readout_group()].add_outer(&err, &step.states[out])?;
            ops.add_flops(2 * w_out.len() as u64);
        }

        for n in (0..nodes.len()).rev() {
            let node = &nodes[n];
            let g_a: Vec<f64> = dh[n].iter().zip(&step.derivs[n]).map(|(a, d)| a * d).collect();
            ops.add_flops(node.dim as u64);
            for (&p, &g) in node.preds.iter().zip(&node.pred_groups) {
                let w = params.at(g);
                let back = w.t_matvec(&g_a)?;
                for (a, b) in dh[p].iter_mut().zip(&back) {
                    *a += b;
                }
                grads[g].add_outer(&g_a, &step.states[p])?;
                ops.add_flops(4 * w.len() as u64);
            }
            if let Some(g) = node.input_group {
                grads[g].add_outer(&g_a, x)?;
                ops.add_flops(2 * grads[g].len() as u64);
            }
            if let Some(g) = node.recurrent_group {
                grads[g].add_outer(&g_a, &prev[n])?;
                carry[n] = params.at(g).t_matvec(&g_a)?;
                ops.add_flops(4 * grads[g].len() as u64);
            }
            let bias = grads[node.bias_group].as_mut_slice();
            for (b, v) in bias.iter_mut().zip(&g_a) {
                *b += v;
            }
            ops.add_flops(node.dim as u64);
        }
    }

    let mut set = GradientSet::new();
    for &g in net.tracked() {
        set.insert(net.group(g).id.clone(), grads[g].clone());
    }
    Ok(set)
}
