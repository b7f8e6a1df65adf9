//! Exact forward-mode gradients: single-layer RTRL and its deep/DAG form.
//!
//! The sensitivity `dh/dθ` of an `H`-unit node with respect to an `H × K`
//! weight matrix is kept flattened as an `H × (H·K)` matrix, so one
//! [`contract`] call is the whole recurrent update.

use crate::engine::{episode_gradient, Fault, Injection, Propagation};
use crate::error::{Error, Result};
use crate::linalg::{contract, Matrix, OpCounter};
use crate::network::{Network, ParamGroupId, Params};
use crate::oracles::GradientSet;

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityDense {
    pub node: usize,
    pub group: ParamGroupId,
    pub matrix: Matrix,
}

/// Zero sensitivity for a tracked group at its home node.
pub fn rtrl_init(net: &Network, group: &ParamGroupId) -> Result<SensitivityDense> {
    let g = net
        .group_index(group)
        .filter(|g| net.tracked().contains(g))
        .ok_or_else(|| Error::Argument(format!("group `{group}` is not tracked")))?;
    let info = net.group(g);
    let node = info
        .home
        .ok_or_else(|| Error::Argument(format!("group `{group}` has no hidden-state home")))?;
    Ok(SensitivityDense {
        node,
        group: group.clone(),
        matrix: Matrix::zeros(net.node(node).dim, info.len()),
    })
}

/// Instantaneous `∂h_t/∂θ` in dense form.
pub fn dense_partial(node: usize, group: ParamGroupId, derivs: &[f64], operand: &[f64]) -> SensitivityDense {
    SensitivityDense {
        node,
        group,
        matrix: Injection {
            d: derivs.to_vec(),
            u: operand.to_vec(),
        }
        .dense(),
    }
}

/// `S_t = partial + J_rec · S_{t−1}`.
pub fn rtrl_step(
    prev: &SensitivityDense,
    j_rec: &Matrix,
    partial: &SensitivityDense,
    ops: &mut OpCounter,
) -> Result<SensitivityDense> {
    if partial.matrix.shape() != (j_rec.rows(), prev.matrix.cols()) {
        return Err(Error::shape(
            "rtrl_step",
            format!("partial {}", partial.matrix.shape_str()),
            format!("J_rec·S {}x{}", j_rec.rows(), prev.matrix.cols()),
        ));
    }
    let mut next = contract(j_rec, &prev.matrix, ops)?;
    next.add_assign(&partial.matrix)?;
    ops.add_flops(next.len() as u64);
    Ok(SensitivityDense {
        node: prev.node,
        group: prev.group.clone(),
        matrix: next,
    })
}

/// `(dL/dy · J_out) · S`, reshaped to `rows × cols`.
pub fn rtrl_gradient(
    sensitivity: &SensitivityDense,
    dl_dy: &[f64],
    j_out: &Matrix,
    (rows, cols): (usize, usize),
    ops: &mut OpCounter,
) -> Result<Matrix> {
    if sensitivity.matrix.cols() != rows * cols {
        return Err(Error::shape(
            "rtrl_gradient",
            format!("S {}", sensitivity.matrix.shape_str()),
            format!("group {rows}x{cols}"),
        ));
    }
    let delta = j_out.t_matvec(dl_dy)?;
    let row = Matrix::from_vec(1, delta.len(), delta)?;
    let g = contract(&row, &sensitivity.matrix, ops)?;
    Matrix::from_vec(rows, cols, g.into_vec())
}

/// Single-layer RTRL over an episode.
pub fn rtrl_episode(
    net: &Network,
    params: &Params,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    ops: &mut OpCounter,
) -> Result<GradientSet> {
    if net.nodes().len() != 1 {
        return Err(Error::Argument(format!(
            "rtrl needs a single-layer network, got {} layers; use deep_rtrl",
            net.nodes().len()
        )));
    }
    deep_rtrl_episode(net, params, inputs, targets, ops)
}

/// Exact online gradient for chains and DAGs: dense traces along every path
/// from each tracked group's home node to the output.
pub fn deep_rtrl_episode(
    net: &Network,
    params: &Params,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    ops: &mut OpCounter,
) -> Result<GradientSet> {
    episode_gradient(net, params, inputs, targets, Propagation::Exact, None, ops)
}

#[doc(hidden)]
pub fn deep_rtrl_episode_with_fault(
    net: &Network,
    params: &Params,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    fault: Option<Fault>,
    ops: &mut OpCounter,
) -> Result<GradientSet> {
    episode_gradient(net, params, inputs, targets, Propagation::Exact, fault, ops)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::ActivationKind::{Linear, Tanh};
    use crate::network::{init_params, NetworkSpec};
    use crate::oracles::bptt_gradient;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn init_shape_and_untracked_error() {
        let net = Network::from_chain(&NetworkSpec::chain(3, &[(4, Tanh)], 1)).unwrap();
        let s = rtrl_init(&net, &ParamGroupId::Input("l1".into())).unwrap();
        assert_eq!(s.matrix.shape(), (4, 12));
        assert!(s.matrix.as_slice().iter().all(|v| *v == 0.0));
        assert!(matches!(
            rtrl_init(&net, &ParamGroupId::Recurrent("l1".into())),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn step_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let id = ParamGroupId::Input("l1".into());
        let prev = SensitivityDense {
            node: 0,
            group: id.clone(),
            matrix: rand_matrix(3, 6, &mut rng),
        };
        let partial = SensitivityDense {
            node: 0,
            group: id.clone(),
            matrix: rand_matrix(3, 6, &mut rng),
        };
        let mut ops = OpCounter::new();
        let s = rtrl_step(&prev, &Matrix::zeros(3, 3), &partial, &mut ops).unwrap();
        assert_eq!(s.matrix, partial.matrix);
        let zero = SensitivityDense {
            matrix: Matrix::zeros(3, 6),
            ..partial.clone()
        };
        let s = rtrl_step(&prev, &Matrix::identity(3), &zero, &mut ops).unwrap();
        assert_eq!(s.matrix, prev.matrix);
        assert!(rtrl_step(&prev, &Matrix::identity(2), &zero, &mut ops).is_err());
    }

    #[test]
    fn zero_recurrence_first_step_is_instantaneous_partial() {
        let net = Network::from_chain(&NetworkSpec::chain(2, &[(3, Tanh)], 1)).unwrap();
        let mut p = init_params(&net, 2);
        *p.get_mut(&ParamGroupId::Recurrent("l1".into())).unwrap() = Matrix::zeros(3, 3);
        let mut learner = crate::engine::ForwardLearner::new(&net, Propagation::Exact).unwrap();
        let x = [0.4, -0.9];
        learner.step(&p, &x, None).unwrap();
        let step = net.forward_step(&p, &net.zero_states(), &x).unwrap();
        let want = dense_partial(0, "input:l1".parse().unwrap(), &step.derivs[0], &x);
        assert_eq!(learner.trace_sets()[0].traces[0].matrix(), &want.matrix);
    }

    #[test]
    fn final_sensitivity_matches_state_finite_differences() {
        // H = 3, T = 4, tracked recurrent weights; perturb each θ_jk and difference h_T.
        let net = Network::from_chain(&NetworkSpec::chain(2, &[(3, Tanh)], 1))
            .unwrap()
            .with_tracked(&["recurrent:l1".parse().unwrap()])
            .unwrap();
        let p = init_params(&net, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<Vec<f64>> = (0..4)
            .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let mut learner = crate::engine::ForwardLearner::new(&net, Propagation::Exact).unwrap();
        for x in &xs {
            learner.step(&p, x, None).unwrap();
        }
        let s = learner.trace_sets()[0].traces[0].matrix().clone();
        let g = net.group_index(&"recurrent:l1".parse().unwrap()).unwrap();
        let h = 1e-6;
        let final_state = |params: &Params| {
            let r = net.rollout(params, &xs, &[vec![0.0]]).unwrap();
            r.steps[3].states[0].clone()
        };
        for col in 0..9 {
            let mut plus = p.clone();
            plus.at_mut(g).as_mut_slice()[col] += h;
            let mut minus = p.clone();
            minus.at_mut(g).as_mut_slice()[col] -= h;
            let (hp, hm) = (final_state(&plus), final_state(&minus));
            for i in 0..3 {
                let fd = (hp[i] - hm[i]) / (2.0 * h);
                assert!(
                    (s[(i, col)] - fd).abs() < 1e-6,
                    "({i},{col}) {} vs {fd}",
                    s[(i, col)]
                );
            }
        }
    }

    #[test]
    fn gradient_of_zero_loss_signal_is_zero() {
        let s = SensitivityDense {
            node: 0,
            group: ParamGroupId::Readout,
            matrix: Matrix::from_fn(2, 4, |r, c| (r + c) as f64),
        };
        let g = rtrl_gradient(
            &s,
            &[0.0],
            &Matrix::from_fn(1, 2, |_, c| c as f64 + 1.0),
            (2, 2),
            &mut OpCounter::new(),
        )
        .unwrap();
        assert!(g.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn one_unit_one_step_closed_form() {
        // y = v·w·x, L = ½(y − y*)², dL/dw = (y − y*)·v·x.
        // v = 2, w = 0.5, x = 3, y* = 1: y = 3, dL/dw = 2·2·3 = 12.
        let net = Network::from_chain(&NetworkSpec::chain(1, &[(1, Linear)], 1)).unwrap();
        let mut p = Params::zeros(&net);
        *p.get_mut(&"input:l1".parse().unwrap()).unwrap() = Matrix::from_vec(1, 1, vec![0.5]).unwrap();
        *p.get_mut(&ParamGroupId::Readout).unwrap() = Matrix::from_vec(1, 1, vec![2.0]).unwrap();
        let g = rtrl_episode(&net, &p, &[vec![3.0]], &[vec![1.0]], &mut OpCounter::new()).unwrap();
        assert_eq!(g.get(&"input:l1".parse().unwrap()).unwrap()[(0, 0)], 12.0);
    }

    #[test]
    fn single_layer_matches_bptt_over_seeds() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for seed in 0..50u64 {
            let h = rng.gen_range(1..=6);
            let t = rng.gen_range(1..=8);
            let net = Network::from_chain(&NetworkSpec::chain(2, &[(h, Tanh)], 2))
                .unwrap()
                .with_all_tracked();
            let p = init_params(&net, seed);
            let xs: Vec<Vec<f64>> = (0..t)
                .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
                .collect();
            let ys = vec![vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]];
            let a = rtrl_episode(&net, &p, &xs, &ys, &mut OpCounter::new()).unwrap();
            let b = bptt_gradient(&net, &p, &xs, &ys, &mut OpCounter::new()).unwrap();
            let err = crate::oracles::relative_l2(&a, &b).unwrap();
            assert!(err <= 1e-10, "seed {seed}: {err}");
        }
    }

    #[test]
    fn rtrl_rejects_deep_networks() {
        let net = Network::from_chain(&NetworkSpec::chain(1, &[(2, Tanh), (2, Tanh)], 1)).unwrap();
        let p = init_params(&net, 0);
        assert!(rtrl_episode(&net, &p, &[vec![1.0]], &[vec![0.0]], &mut OpCounter::new()).is_err());
    }

    #[test]
    fn disconnected_upper_layer_gives_zero_gradient() {
        let net = Network::from_chain(&NetworkSpec::chain(2, &[(3, Tanh), (3, Tanh)], 1)).unwrap();
        let mut p = init_params(&net, 5);
        *p.get_mut(&ParamGroupId::edge("l1", "l2")).unwrap() = Matrix::zeros(3, 3);
        let xs = vec![vec![0.3, 0.2]; 5];
        let g = deep_rtrl_episode(&net, &p, &xs, &[vec![1.0]], &mut OpCounter::new()).unwrap();
        assert_eq!(g.norm(), 0.0);
    }
}
