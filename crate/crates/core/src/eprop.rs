//! E-prop: RTRL with the total parameter sensitivity replaced by the
//! instantaneous partial, giving one trace value per synapse at the group's
//! home layer.
//!
//! At the home layer only the diagonal of `∂h_t/∂h_{t−1}` is used, so
//! `dh_i/dθ_{jk}` is taken to be zero for `j ≠ i`. Above the home layer the
//! nested recursion
//!
//! ```text
//! ε^l_t = D(∂h^l_t/∂h^l_{t−1}) ε^l_{t−1} + Σ_{p→l} C(∂h^l_t/∂h^p_t) ε^p_t
//! ```
//!
//! carries the trace up to the output, with `D`, `C` either full Jacobians
//! ([`TraceMode::DiagHomeDenseAbove`]) or their diagonals
//! ([`TraceMode::DiagEverywhere`], which needs equal widths along the path).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::{
    contract_loss, episode_gradient, propagate, Fault, Injection, Propagation, StepJacobians, Trace, TraceSet,
};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, OpCounter};
use crate::network::{Network, ParamGroupId, Params};
use crate::oracles::GradientSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceMode {
    /// Per-synapse trace at every layer on the path.
    DiagEverywhere,
    /// Per-synapse trace at the home layer, dense traces above it.
    #[default]
    DiagHomeDenseAbove,
}

impl TraceMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceMode::DiagEverywhere => "diag_everywhere",
            TraceMode::DiagHomeDenseAbove => "diag_home_dense_above",
        }
    }
}

impl fmt::Display for TraceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TraceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diag_everywhere" => Ok(TraceMode::DiagEverywhere),
            "diag_home_dense_above" => Ok(TraceMode::DiagHomeDenseAbove),
            _ => Err(Error::Argument(format!("unknown trace mode `{s}`"))),
        }
    }
}

/// Per-synapse eligibility trace, same shape as its parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityDiag {
    pub node: usize,
    pub group: ParamGroupId,
    pub matrix: Matrix,
}

/// Row `i` of the new trace is `partial_i + J_ii · prev_i`.
pub fn eprop_step(
    prev: &SensitivityDiag,
    j_rec_diag: &[f64],
    partial: &SensitivityDiag,
    ops: &mut OpCounter,
) -> Result<SensitivityDiag> {
    if j_rec_diag.len() != prev.matrix.rows() {
        return Err(Error::shape(
            "eprop_step",
            format!("J_rec diagonal of length {}", j_rec_diag.len()),
            format!("trace {}", prev.matrix.shape_str()),
        ));
    }
    if partial.matrix.shape() != prev.matrix.shape() {
        return Err(Error::shape(
            "eprop_step",
            format!("partial {}", partial.matrix.shape_str()),
            format!("trace {}", prev.matrix.shape_str()),
        ));
    }
    let m = &prev.matrix;
    let next = Matrix::from_fn(m.rows(), m.cols(), |i, k| {
        partial.matrix[(i, k)] + j_rec_diag[i] * m[(i, k)]
    });
    ops.add_flops(2 * m.len() as u64);
    Ok(SensitivityDiag {
        node: prev.node,
        group: prev.group.clone(),
        matrix: next,
    })
}

fn check_kinds(net: &Network, set: &TraceSet, mode: TraceMode) -> Result<()> {
    for (&n, trace) in set.nodes.iter().zip(&set.traces) {
        let want_diag = n == set.home || mode == TraceMode::DiagEverywhere;
        let is_diag = matches!(trace, Trace::Diag(_));
        if want_diag != is_diag {
            return Err(Error::Internal(format!(
                "trace at `{}` does not match trace mode {mode}",
                net.node(n).id
            )));
        }
    }
    Ok(())
}

/// One timestep of the layered recursion for a chain, bottom to top.
pub fn deep_eprop_step(
    net: &Network,
    set: &mut TraceSet,
    jac: &mut StepJacobians<'_>,
    partial: &Injection,
    mode: TraceMode,
    ops: &mut OpCounter,
) -> Result<()> {
    check_kinds(net, set, mode)?;
    let order = set.nodes.clone();
    propagate(net, set, jac, partial, &order, None, ops)
}

/// One timestep of the DAG recursion; `order` must be topological over the set's nodes.
pub fn dag_eprop_step(
    net: &Network,
    set: &mut TraceSet,
    jac: &mut StepJacobians<'_>,
    partial: &Injection,
    order: &[usize],
    mode: TraceMode,
    ops: &mut OpCounter,
) -> Result<()> {
    check_kinds(net, set, mode)?;
    propagate(net, set, jac, partial, order, None, ops)
}

/// Adds this step's loss contribution `δᵀ ε^top` into `grad`; `delta` is
/// `∂L_t/∂h^top_t`. Calling it at every loss step keeps the running sum online.
pub fn eprop_gradient(grad: &mut Matrix, top: &Trace, delta: &[f64], ops: &mut OpCounter) -> Result<()> {
    contract_loss(grad, top, delta, ops)
}

/// Single-layer E-prop over an episode.
pub fn eprop_episode(
    net: &Network,
    params: &Params,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    ops: &mut OpCounter,
) -> Result<GradientSet> {
    if net.nodes().len() != 1 {
        return Err(Error::Argument(format!(
            "eprop needs a single-layer network, got {} layers; use deep_eprop",
            net.nodes().len()
        )));
    }
    deep_eprop_episode(net, params, inputs, targets, TraceMode::DiagHomeDenseAbove, ops)
}

/// Deep/DAG E-prop over an episode with the given trace mode.
pub fn deep_eprop_episode(
    net: &Network,
    params: &Params,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    mode: TraceMode,
    ops: &mut OpCounter,
) -> Result<GradientSet> {
    episode_gradient(net, params, inputs, targets, Propagation::Eprop(mode), None, ops)
}

#[doc(hidden)]
pub fn deep_eprop_episode_with_fault(
    net: &Network,
    params: &Params,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    mode: TraceMode,
    fault: Option<Fault>,
    ops: &mut OpCounter,
) -> Result<GradientSet> {
    episode_gradient(net, params, inputs, targets, Propagation::Eprop(mode), fault, ops)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::ForwardLearner;
    use crate::linalg::ActivationKind::Tanh;
    use crate::network::{init_params, NetworkSpec};
    use crate::oracles::{bptt_gradient, relative_l2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn diag_trace(m: Matrix) -> SensitivityDiag {
        SensitivityDiag {
            node: 0,
            group: ParamGroupId::Input("l1".into()),
            matrix: m,
        }
    }

    fn episode(net: &Network, t: usize, rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let xs = (0..t)
            .map(|_| (0..net.input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let ys = vec![(0..net.readout_dim).map(|_| rng.gen_range(-1.0..1.0)).collect()];
        (xs, ys)
    }

    fn diagonalize(p: &mut Params, id: &str) {
        let m = p.get_mut(&id.parse().unwrap()).unwrap();
        let d = m.diagonal();
        *m = Matrix::diag(&d);
    }

    #[test]
    fn step_edge_cases() {
        let prev = diag_trace(Matrix::from_fn(3, 2, |r, c| (r * 2 + c) as f64));
        let partial = diag_trace(Matrix::from_fn(3, 2, |r, c| 0.5 - (r + c) as f64));
        let mut ops = OpCounter::new();
        assert_eq!(
            eprop_step(&prev, &[0.0; 3], &partial, &mut ops).unwrap().matrix,
            partial.matrix
        );
        let zero = diag_trace(Matrix::zeros(3, 2));
        assert_eq!(
            eprop_step(&prev, &[1.0; 3], &zero, &mut ops).unwrap().matrix,
            prev.matrix
        );
        assert!(eprop_step(&prev, &[1.0; 2], &zero, &mut ops).is_err());
    }

    #[test]
    fn diagonal_recurrence_single_layer_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Network::from_chain(&NetworkSpec::chain(2, &[(4, Tanh)], 1))
            .unwrap()
            .with_all_tracked();
        let mut p = init_params(&net, 3);
        diagonalize(&mut p, "recurrent:l1");
        let (xs, ys) = episode(&net, 6, &mut rng);
        let e = eprop_episode(&net, &p, &xs, &ys, &mut OpCounter::new()).unwrap();
        let b = bptt_gradient(&net, &p, &xs, &ys, &mut OpCounter::new()).unwrap();
        assert!(relative_l2(&e, &b).unwrap() <= 1e-9);
    }

    #[test]
    fn diag_everywhere_exact_with_diagonal_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = Network::from_chain(&NetworkSpec::chain(2, &[(3, Tanh), (3, Tanh)], 1))
            .unwrap()
            .with_all_tracked();
        let mut p = init_params(&net, 4);
        for id in ["recurrent:l1", "recurrent:l2", "edge:l1->l2"] {
            diagonalize(&mut p, id);
        }
        let (xs, ys) = episode(&net, 5, &mut rng);
        let b = bptt_gradient(&net, &p, &xs, &ys, &mut OpCounter::new()).unwrap();
        for mode in [TraceMode::DiagEverywhere, TraceMode::DiagHomeDenseAbove] {
            let e = deep_eprop_episode(&net, &p, &xs, &ys, mode, &mut OpCounter::new()).unwrap();
            assert!(relative_l2(&e, &b).unwrap() <= 1e-9, "{mode}");
        }
    }

    #[test]
    fn dense_above_exact_with_diagonal_home_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = Network::from_chain(&NetworkSpec::chain(2, &[(3, Tanh), (5, Tanh)], 2)).unwrap();
        let mut p = init_params(&net, 8);
        diagonalize(&mut p, "recurrent:l1");
        let (xs, ys) = episode(&net, 7, &mut rng);
        let b = bptt_gradient(&net, &p, &xs, &ys, &mut OpCounter::new()).unwrap();
        let e = deep_eprop_episode(
            &net,
            &p,
            &xs,
            &ys,
            TraceMode::DiagHomeDenseAbove,
            &mut OpCounter::new(),
        )
        .unwrap();
        assert!(relative_l2(&e, &b).unwrap() <= 1e-9);
    }

    #[test]
    fn single_step_episode_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = Network::from_chain(&NetworkSpec::chain(2, &[(4, Tanh), (3, Tanh)], 1))
            .unwrap()
            .with_all_tracked();
        let p = init_params(&net, 1);
        let (xs, ys) = episode(&net, 1, &mut rng);
        let b = bptt_gradient(&net, &p, &xs, &ys, &mut OpCounter::new()).unwrap();
        let e = deep_eprop_episode(
            &net,
            &p,
            &xs,
            &ys,
            TraceMode::DiagHomeDenseAbove,
            &mut OpCounter::new(),
        )
        .unwrap();
        assert!(relative_l2(&e, &b).unwrap() <= 1e-12);
    }

    #[test]
    fn zero_cross_jacobian_leaves_only_recurrent_term() {
        let net = Network::from_chain(&NetworkSpec::chain(1, &[(2, Tanh), (2, Tanh)], 1)).unwrap();
        let mut p = init_params(&net, 2);
        let mut learner =
            ForwardLearner::new(&net, Propagation::Eprop(TraceMode::DiagHomeDenseAbove)).unwrap();
        learner.step(&p, &[0.7], None).unwrap();
        let before = learner.trace_sets()[0].traces[1].matrix().clone();
        *p.get_mut(&ParamGroupId::edge("l1", "l2")).unwrap() = Matrix::zeros(2, 2);
        // Same previous state, so the recurrent Jacobian is computable independently.
        let step = net.forward_step(&p, learner.states(), &[0.2]).unwrap();
        let mut ops = OpCounter::new();
        let j = net.recurrent_jacobian(&p, 1, &step.derivs[1], &mut ops).unwrap();
        let want = crate::linalg::contract(&j, &before, &mut ops).unwrap();
        learner.step(&p, &[0.2], None).unwrap();
        assert_eq!(learner.trace_sets()[0].traces[1].matrix(), &want);
    }

    #[test]
    fn mismatched_mode_is_internal_error() {
        let net = Network::from_chain(&NetworkSpec::chain(1, &[(2, Tanh), (2, Tanh)], 1)).unwrap();
        let p = init_params(&net, 2);
        let mut set = TraceSet::new(
            &net,
            net.tracked()[0],
            Propagation::Eprop(TraceMode::DiagHomeDenseAbove),
        )
        .unwrap();
        let step = net.forward_step(&p, &net.zero_states(), &[0.1]).unwrap();
        let mut jac = StepJacobians::new(&net, &p, &step);
        let inj = Injection {
            d: step.derivs[0].clone(),
            u: vec![0.1],
        };
        let err = deep_eprop_step(
            &net,
            &mut set,
            &mut jac,
            &inj,
            TraceMode::DiagEverywhere,
            &mut OpCounter::new(),
        );
        assert!(matches!(err, Err(Error::Internal(_))));
    }

    #[test]
    fn non_topological_order_is_internal_error() {
        let net = Network::from_chain(&NetworkSpec::chain(1, &[(2, Tanh), (2, Tanh)], 1)).unwrap();
        let p = init_params(&net, 2);
        let mode = TraceMode::DiagHomeDenseAbove;
        let mut set = TraceSet::new(&net, net.tracked()[0], Propagation::Eprop(mode)).unwrap();
        let step = net.forward_step(&p, &net.zero_states(), &[0.1]).unwrap();
        let mut jac = StepJacobians::new(&net, &p, &step);
        let inj = Injection {
            d: step.derivs[0].clone(),
            u: vec![0.1],
        };
        let err = dag_eprop_step(
            &net,
            &mut set,
            &mut jac,
            &inj,
            &[1, 0],
            mode,
            &mut OpCounter::new(),
        );
        assert!(matches!(err, Err(Error::Internal(_))));
        let mut missing = set.clone();
        missing.nodes.pop();
        missing.traces.pop();
        let err = dag_eprop_step(
            &net,
            &mut missing,
            &mut jac,
            &inj,
            &[0],
            mode,
            &mut OpCounter::new(),
        );
        assert!(matches!(err, Err(Error::Internal(_))));
    }

    #[test]
    fn diag_everywhere_stores_one_value_per_synapse_per_layer() {
        let net = Network::from_chain(&NetworkSpec::chain(2, &[(4, Tanh), (4, Tanh), (4, Tanh)], 1))
            .unwrap()
            .with_tracked(&["recurrent:l1".parse().unwrap()])
            .unwrap();
        let learner = ForwardLearner::new(&net, Propagation::Eprop(TraceMode::DiagEverywhere)).unwrap();
        assert_eq!(learner.trace_value_count(), 3 * 16);
    }

    #[test]
    fn trace_mode_text() {
        for m in [TraceMode::DiagEverywhere, TraceMode::DiagHomeDenseAbove] {
            assert_eq!(m.to_string().parse::<TraceMode>().unwrap(), m);
        }
        assert!("diag".parse::<TraceMode>().is_err());
    }
}
