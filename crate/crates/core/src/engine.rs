//! Forward-mode trace propagation shared by RTRL and E-prop.
//!
//! Each tracked group owns a [`TraceSet`]: one trace per node on a directed
//! path from the group's home node to the output node. Per timestep, nodes are
//! visited in topological order and updated as
//!
//! ```text
//! ε^n_t = R(∂h^n_t/∂h^n_{t−1}) ε^n_{t−1} + Σ_{p→n} X(∂h^n_t/∂h^p_t) ε^p_t + [n = home] ∂h^n_t/∂θ
//! ```
//!
//! where `R` and `X` are the full Jacobians for exact propagation and their
//! diagonal restrictions wherever the E-prop trace mode discards cross-unit
//! terms. The output-node trace is contracted with the loss gradient at every
//! step that has a loss, so nothing from past steps is kept besides the traces
//! and the previous hidden state.

use crate::eprop::TraceMode;
use crate::error::{Error, Result};
use crate::linalg::{contract, Matrix, OpCounter};
use crate::network::{mse, Network, Params, StepState};
use crate::oracles::GradientSet;

/// How traces are propagated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Propagation {
    /// Dense traces and full Jacobians everywhere.
    Exact,
    /// Per-synapse trace at the home node; upper layers per the mode.
    Eprop(TraceMode),
}

/// Deliberate defects for mutation testing of the verification suite.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Negates the cross-layer term of the deep trace recursion.
    FlipCrossLayerSign,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Trace {
    /// `state_dim × group_len` sensitivity.
    Dense(Matrix),
    /// One scalar per synapse, shaped like the group.
    Diag(Matrix),
}

impl Trace {
    pub fn matrix(&self) -> &Matrix {
        match self {
            Trace::Dense(m) | Trace::Diag(m) => m,
        }
    }

    pub fn len(&self) -> usize {
        self.matrix().len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix().is_empty()
    }
}

/// Instantaneous `∂h^home_t/∂θ` in factored form: row `i` of θ only reaches
/// unit `i`, with `∂h_i/∂θ_{ik} = d_i u_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Injection {
    pub d: Vec<f64>,
    pub u: Vec<f64>,
}

impl Injection {
    /// Dense `H × (H·K)` form.
    pub fn dense(&self) -> Matrix {
        let (h, k) = (self.d.len(), self.u.len());
        let mut m = Matrix::zeros(h, h * k);
        for i in 0..h {
            for (c, uc) in self.u.iter().enumerate() {
                m[(i, i * k + c)] = self.d[i] * uc;
            }
        }
        m
    }

    /// Per-synapse `H × K` form.
    pub fn diag(&self) -> Matrix {
        Matrix::from_fn(self.d.len(), self.u.len(), |i, c| self.d[i] * self.u[c])
    }
}

/// The trace pipeline of one tracked group.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    pub group: usize,
    pub home: usize,
    /// Path nodes in ascending (topological) order.
    pub nodes: Vec<usize>,
    pub traces: Vec<Trace>,
}

impl TraceSet {
    pub fn new(net: &Network, group: usize, propagation: Propagation) -> Result<Self> {
        let info = net.group(group);
        let home = info
            .home
            .ok_or_else(|| Error::Argument(format!("group `{}` has no trace pipeline", info.id)))?;
        let nodes = net.path_nodes(home);
        if propagation == Propagation::Eprop(TraceMode::DiagEverywhere) {
            let w = net.node(home).dim;
            if let Some(&n) = nodes.iter().find(|&&n| net.node(n).dim != w) {
                return Err(Error::Validation(format!(
                    "trace_mode diag_everywhere requires equal widths along the path of `{}`; `{}` has width {} but `{}` has width {w}",
                    info.id,
                    net.node(n).id,
                    net.node(n).dim,
                    net.node(home).id
                )));
            }
        }
        let traces = nodes
            .iter()
            .map(|&n| match (propagation, n == home) {
                (Propagation::Exact, _) | (Propagation::Eprop(TraceMode::DiagHomeDenseAbove), false) => {
                    Trace::Dense(Matrix::zeros(net.node(n).dim, info.len()))
                }
                (Propagation::Eprop(_), _) => Trace::Diag(Matrix::zeros(info.rows, info.cols)),
            })
            .collect();
        Ok(TraceSet {
            group,
            home,
            nodes,
            traces,
        })
    }

    pub fn value_count(&self) -> usize {
        self.traces.iter().map(Trace::len).sum()
    }

    pub fn trace_of(&self, node: usize) -> Option<&Trace> {
        self.nodes
            .iter()
            .position(|&n| n == node)
            .map(|i| &self.traces[i])
    }
}

/// Local Jacobians at one timestep, computed on demand and cached.
pub struct StepJacobians<'a> {
    net: &'a Network,
    params: &'a Params,
    step: &'a StepState,
    recurrent: Vec<Option<Option<Matrix>>>,
    cross: Vec<Vec<Option<Matrix>>>,
}

impl<'a> StepJacobians<'a> {
    pub fn new(net: &'a Network, params: &'a Params, step: &'a StepState) -> Self {
        StepJacobians {
            net,
            params,
            step,
            recurrent: vec![None; net.nodes().len()],
            cross: net.nodes().iter().map(|n| vec![None; n.preds.len()]).collect(),
        }
    }

    /// `∂h^n_t/∂h^n_{t−1}`, `None` when the node has no recurrence.
    pub fn recurrent(&mut self, n: usize, ops: &mut OpCounter) -> Option<&Matrix> {
        if self.recurrent[n].is_none() {
            let j = self
                .net
                .recurrent_jacobian(self.params, n, &self.step.derivs[n], ops);
            self.recurrent[n] = Some(j);
        }
        self.recurrent[n].as_ref().unwrap().as_ref()
    }

    /// `∂h^n_t/∂h^p_t` for the `k`-th predecessor of `n`.
    pub fn cross(&mut self, n: usize, k: usize, ops: &mut OpCounter) -> &Matrix {
        if self.cross[n][k].is_none() {
            let j = self
                .net
                .edge_jacobian(self.params, n, k, &self.step.derivs[n], ops);
            self.cross[n][k] = Some(j);
        }
        self.cross[n][k].as_ref().unwrap()
    }
}

/// Advances one trace set by one timestep. `order` must list the set's nodes
/// so that every predecessor inside the set comes first.
pub(crate) fn propagate(
    net: &Network,
    set: &mut TraceSet,
    jac: &mut StepJacobians<'_>,
    injection: &Injection,
    order: &[usize],
    fault: Option<Fault>,
    ops: &mut OpCounter,
) -> Result<()> {
    let expected = net.path_nodes(set.home);
    if set.nodes != expected {
        return Err(Error::Internal(format!(
            "trace set for group `{}` covers nodes {:?}, path requires {:?}",
            net.group(set.group).id,
            set.nodes,
            expected
        )));
    }
    let mut sorted = order.to_vec();
    sorted.sort_unstable();
    if sorted != set.nodes {
        return Err(Error::Internal(format!(
            "processing order {order:?} does not cover trace nodes {:?}",
            set.nodes
        )));
    }
    let cross_sign = if fault == Some(Fault::FlipCrossLayerSign) {
        -1.0
    } else {
        1.0
    };
    let slot = |n: usize| set.nodes.iter().position(|&m| m == n);
    let mut done = vec![false; set.nodes.len()];
    for &n in order {
        let i = slot(n).unwrap();
        let node = net.node(n);
        for &p in &node.preds {
            if let Some(pi) = slot(p) {
                if !done[pi] {
                    return Err(Error::Internal(format!(
                        "node `{}` processed before its predecessor `{}`",
                        node.id,
                        net.node(p).id
                    )));
                }
            }
        }

        // Recurrent term.
        let mut next = match (&set.traces[i], jac.recurrent(n, ops)) {
            (Trace::Dense(prev), Some(j)) => Trace::Dense(contract(j, prev, ops)?),
            (Trace::Diag(prev), Some(j)) => {
                let diag = j.diagonal();
                Trace::Diag(scale_rows_by(prev, &diag, ops))
            }
            (Trace::Dense(prev), None) => Trace::Dense(Matrix::zeros(prev.rows(), prev.cols())),
            (Trace::Diag(prev), None) => Trace::Diag(Matrix::zeros(prev.rows(), prev.cols())),
        };

        // Hierarchical terms from predecessors already at step t.
        for (k, &p) in node.preds.iter().enumerate() {
            let Some(pi) = slot(p) else { continue };
            let c = jac.cross(n, k, ops);
            match (&mut next, &set.traces[pi]) {
                (Trace::Dense(acc), Trace::Dense(src)) => {
                    acc.axpy(cross_sign, &contract(c, src, ops)?)?;
                }
                (Trace::Dense(acc), Trace::Diag(src)) => {
                    add_cross_from_diag(acc, c, src, cross_sign, ops)?;
                }
                (Trace::Diag(acc), Trace::Diag(src)) => {
                    let diag = c.diagonal();
                    acc.axpy(cross_sign, &scale_rows_by(src, &diag, ops))?;
                }
                (Trace::Diag(_), Trace::Dense(_)) => {
                    return Err(Error::Internal(
                        "per-synapse trace cannot receive a dense trace".into(),
                    ));
                }
            }
        }

        if n == set.home {
            inject(&mut next, injection, ops)?;
        }
        set.traces[i] = next;
        done[i] = true;
    }
    Ok(())
}

/// `diag(d) · m`.
fn scale_rows_by(m: &Matrix, d: &[f64], ops: &mut OpCounter) -> Matrix {
    ops.add_flops(m.len() as u64);
    Matrix::from_fn(m.rows(), m.cols(), |r, c| d[r] * m[(r, c)])
}

/// `acc += s · C · expand(src)` where `expand` places row `i` of the
/// per-synapse trace in columns `i·K..(i+1)·K` of a dense trace.
fn add_cross_from_diag(
    acc: &mut Matrix,
    c: &Matrix,
    src: &Matrix,
    s: f64,
    ops: &mut OpCounter,
) -> Result<()> {
    let (r, k) = src.shape();
    if c.cols() != r || acc.rows() != c.rows() || acc.cols() != r * k {
        return Err(Error::shape(
            "cross-layer contraction",
            format!("C {}", c.shape_str()),
            format!("trace {}", src.shape_str()),
        ));
    }
    for a in 0..c.rows() {
        let row = acc.row_mut(a);
        for i in 0..r {
            let coef = s * c[(a, i)];
            for (dst, v) in row[i * k..(i + 1) * k].iter_mut().zip(src.row(i)) {
                *dst += coef * v;
            }
        }
    }
    ops.add_flops(2 * (c.rows() * r * k) as u64);
    Ok(())
}

fn inject(trace: &mut Trace, inj: &Injection, ops: &mut OpCounter) -> Result<()> {
    let (h, k) = (inj.d.len(), inj.u.len());
    match trace {
        Trace::Dense(m) => {
            if m.rows() != h || m.cols() != h * k {
                return Err(Error::shape(
                    "inject",
                    format!("trace {}", m.shape_str()),
                    format!("partial {h}x{}", h * k),
                ));
            }
            for i in 0..h {
                let row = m.row_mut(i);
                for (c, uc) in inj.u.iter().enumerate() {
                    row[i * k + c] += inj.d[i] * uc;
                }
            }
        }
        Trace::Diag(m) => {
            if m.shape() != (h, k) {
                return Err(Error::shape(
                    "inject",
                    format!("trace {}", m.shape_str()),
                    format!("partial {h}x{k}"),
                ));
            }
            for i in 0..h {
                for (x, uc) in m.row_mut(i).iter_mut().zip(&inj.u) {
                    *x += inj.d[i] * uc;
                }
            }
        }
    }
    ops.add_flops(2 * (h * k) as u64);
    Ok(())
}

/// `grad += δᵀ · trace`, reshaped to the group's shape.
pub(crate) fn contract_loss(
    grad: &mut Matrix,
    trace: &Trace,
    delta: &[f64],
    ops: &mut OpCounter,
) -> Result<()> {
    match trace {
        Trace::Dense(s) => {
            if s.rows() != delta.len() || s.cols() != grad.len() {
                return Err(Error::shape(
                    "loss contraction",
                    format!("trace {}", s.shape_str()),
                    format!("δ {} / gradient {}", delta.len(), grad.shape_str()),
                ));
            }
            let g = grad.as_mut_slice();
            for (r, dr) in delta.iter().enumerate() {
                for (x, v) in g.iter_mut().zip(s.row(r)) {
                    *x += dr * v;
                }
            }
            ops.add_flops(2 * s.len() as u64);
        }
        Trace::Diag(e) => {
            if e.rows() != delta.len() || e.shape() != grad.shape() {
                return Err(Error::shape(
                    "loss contraction",
                    format!("trace {}", e.shape_str()),
                    format!("δ {} / gradient {}", delta.len(), grad.shape_str()),
                ));
            }
            for (r, dr) in delta.iter().enumerate() {
                for (x, v) in grad.row_mut(r).iter_mut().zip(e.row(r)) {
                    *x += dr * v;
                }
            }
            ops.add_flops(2 * e.len() as u64);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub output: Vec<f64>,
    pub loss: Option<f64>,
}

/// Streaming gradient engine: feed one step at a time, read the accumulated
/// gradient whenever a loss has been seen.
#[derive(Debug, Clone)]
pub struct ForwardLearner<'a> {
    net: &'a Network,
    propagation: Propagation,
    fault: Option<Fault>,
    prev: Vec<Vec<f64>>,
    steps: usize,
    sets: Vec<TraceSet>,
    readout: bool,
    grad: GradientSet,
    ops: OpCounter,
}

impl<'a> ForwardLearner<'a> {
    pub fn new(net: &'a Network, propagation: Propagation) -> Result<Self> {
        let mut sets = Vec::new();
        let mut readout = false;
        for &g in net.tracked() {
            if g == net.readout_group() {
                readout = true;
            } else {
                sets.push(TraceSet::new(net, g, propagation)?);
            }
        }
        Ok(ForwardLearner {
            net,
            propagation,
            fault: None,
            prev: net.zero_states(),
            steps: 0,
            sets,
            readout,
            grad: GradientSet::zeros_for(net, net.tracked()),
            ops: OpCounter::new(),
        })
    }

    #[doc(hidden)]
    pub fn with_fault(mut self, fault: Option<Fault>) -> Self {
        self.fault = fault;
        self
    }

    pub fn propagation(&self) -> Propagation {
        self.propagation
    }

    pub fn steps_taken(&self) -> usize {
        self.steps
    }

    pub fn trace_sets(&self) -> &[TraceSet] {
        &self.sets
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.prev
    }

    pub fn gradient(&self) -> &GradientSet {
        &self.grad
    }

    /// Returns the gradient accumulated so far and restarts accumulation.
    pub fn take_gradient(&mut self) -> GradientSet {
        let fresh = GradientSet::zeros_for(self.net, self.net.tracked());
        std::mem::replace(&mut self.grad, fresh)
    }

    pub fn ops(&self) -> &OpCounter {
        &self.ops
    }

    pub fn trace_value_count(&self) -> usize {
        self.sets.iter().map(TraceSet::value_count).sum()
    }

    /// Advances by one timestep. Pass a target only on steps that carry a loss.
    pub fn step(&mut self, params: &Params, x: &[f64], target: Option<&[f64]>) -> Result<StepOutcome> {
        let net = self.net;
        let step = net.forward_step(params, &self.prev, x)?;
        let mut jac = StepJacobians::new(net, params, &step);
        for set in &mut self.sets {
            let u = net.group_operand(set.group, x, &step, &self.prev).to_vec();
            let injection = Injection {
                d: step.derivs[set.home].clone(),
                u,
            };
            let order = set.nodes.clone();
            propagate(net, set, &mut jac, &injection, &order, self.fault, &mut self.ops)?;
        }
        let output = net.readout(params, &step)?;
        let mut loss = None;
        if let Some(target) = target {
            if target.len() != net.readout_dim {
                return Err(Error::shape(
                    "target",
                    format!("length {}", target.len()),
                    format!("readout_dim {}", net.readout_dim),
                ));
            }
            loss = Some(mse(&output, target));
            let err: Vec<f64> = output.iter().zip(target).map(|(y, t)| y - t).collect();
            let w_out = params.at(net.readout_group());
            let delta = w_out.t_matvec(&err)?;
            self.ops.add_flops(2 * w_out.len() as u64);
            let out = net.output_node();
            for set in &self.sets {
                if let Some(trace) = set.trace_of(out) {
                    let id = &net.group(set.group).id;
                    contract_loss(self.grad.get_mut(id).unwrap(), trace, &delta, &mut self.ops)?;
                }
            }
            if self.readout {
                let g = self.grad.get_mut(&net.group(net.readout_group()).id).unwrap();
                g.add_outer(&err, &step.states[out])?;
                self.ops.add_flops(2 * g.len() as u64);
            }
        }
        self.ops.observe_trace_values(self.trace_value_count() as u64);
        self.ops
            .observe_stored_activations((net.state_size() + net.input_dim) as u64);
        self.prev = step.states;
        self.steps += 1;
        Ok(StepOutcome { output, loss })
    }

    /// Feeds a whole episode; parameters stay fixed throughout.
    pub fn run(&mut self, params: &Params, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
        self.net.check_episode(inputs, targets)?;
        let horizon = inputs.len();
        let mut total = 0.0;
        for (t, x) in inputs.iter().enumerate() {
            let target = self.net.target_at(targets, t, horizon);
            if let Some(l) = self.step(params, x, target)?.loss {
                total += l;
            }
        }
        Ok(total)
    }
}

/// Runs an episode and returns the gradient, adding the engine's counts to `ops`.
pub(crate) fn episode_gradient(
    net: &Network,
    params: &Params,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    propagation: Propagation,
    fault: Option<Fault>,
    ops: &mut OpCounter,
) -> Result<GradientSet> {
    let mut learner = ForwardLearner::new(net, propagation)?.with_fault(fault);
    learner.run(params, inputs, targets)?;
    let c = learner.ops();
    ops.add_flops(c.flops);
    ops.observe_trace_values(c.peak_trace_values);
    ops.observe_stored_activations(c.stored_activation_values);
    Ok(learner.take_gradient())
}
