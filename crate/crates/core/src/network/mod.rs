//! Network topology, parameters and forward rollouts.
//!
//! Chains and DAGs compile to the same [`Network`]: a list of recurrent
//! nodes in topological order. Node `n` at step `t` computes
//!
//! ```text
//! a^n_t = b^n + W_in^n x_t [input nodes] + Σ_{p→n} W^{n←p} h^p_t + W_rec^n h^n_{t−1}
//! h^n_t = f_n(a^n_t)
//! ```
//!
//! with `h^n_0 = 0`, and the readout is `y_t = W_out h^out_t` with loss
//! `½‖y_t − y*_t‖²` on the enabled steps.

pub mod checkpoint;
pub mod params;
pub mod spec;

use std::collections::{BTreeMap, BTreeSet};

use crate::eprop::TraceMode;
use crate::error::{Error, Result};
use crate::linalg::{activation_eval, ActivationKind, Matrix, OpCounter};

pub use params::{init_params, ParamGroup, ParamGroupId, ParamKind, Params};
pub use spec::{
    parse_spec, EdgeSpec, GraphSpec, LayerSpec, LossKind, LossTimesteps, ModelSpec, NetworkSpec,
    TrackedGroups,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    Chain,
    Dag,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub id: String,
    pub dim: usize,
    pub activation: ActivationKind,
    pub recurrent: bool,
    pub is_input: bool,
    /// Predecessor node indices, ascending.
    pub preds: Vec<usize>,
    /// Group index of `W^{n←p}` for each entry of `preds`.
    pub pred_groups: Vec<usize>,
    pub succs: Vec<usize>,
    pub input_group: Option<usize>,
    pub recurrent_group: Option<usize>,
    pub bias_group: usize,
}

/// What vector a group's matrix multiplies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupSource {
    Input,
    Pred(usize),
    Recurrent,
    Bias,
    Readout,
}

#[derive(Debug, Clone)]
pub struct GroupInfo {
    pub id: ParamGroupId,
    pub rows: usize,
    pub cols: usize,
    /// Node index whose pre-activation the group enters.
    pub home: Option<usize>,
    pub source: GroupSource,
}

impl GroupInfo {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A validated, compiled network.
#[derive(Debug, Clone)]
pub struct Network {
    pub topology: Topology,
    pub input_dim: usize,
    pub readout_dim: usize,
    pub loss_timesteps: LossTimesteps,
    pub trace_mode: TraceMode,
    pub seed: u64,
    nodes: Vec<Node>,
    groups: Vec<GroupInfo>,
    output: usize,
    readout_group: usize,
    tracked: Vec<usize>,
}

/// Everything one forward step produces, per node in topological order.
#[derive(Debug, Clone, PartialEq)]
pub struct StepState {
    pub preacts: Vec<Vec<f64>>,
    pub states: Vec<Vec<f64>>,
    pub derivs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutRecord {
    pub inputs: Vec<Vec<f64>>,
    pub steps: Vec<StepState>,
    pub outputs: Vec<Vec<f64>>,
    /// `None` where the loss is not taken at that step.
    pub step_losses: Vec<Option<f64>>,
    pub total_loss: f64,
}

impl RolloutRecord {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Node/edge counts of the unrolled computation graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnrolledCounts {
    pub state_nodes: usize,
    pub output_nodes: usize,
    pub loss_nodes: usize,
    pub edges: usize,
}

impl UnrolledCounts {
    pub fn total_nodes(&self) -> usize {
        self.state_nodes + self.output_nodes + self.loss_nodes
    }
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id.contains(':') || id.contains("->") || id.chars().any(char::is_whitespace) {
        return Err(Error::Validation(format!(
            "node id `{id}` must be nonempty and contain no whitespace, `:` or `->`"
        )));
    }
    Ok(())
}

impl Network {
    pub fn build(spec: &ModelSpec) -> Result<Self> {
        match spec {
            ModelSpec::Chain(c) => Network::from_chain(c),
            ModelSpec::Dag(g) => Network::from_graph(g),
        }
    }

    pub fn from_chain(spec: &NetworkSpec) -> Result<Self> {
        if spec.layers.is_empty() {
            return Err(Error::Validation("a chain needs at least one layer".into()));
        }
        let mut net = Network::from_graph(&spec.to_graph())?;
        net.topology = Topology::Chain;
        Ok(net)
    }

    pub fn from_graph(spec: &GraphSpec) -> Result<Self> {
        if spec.nodes.is_empty() {
            return Err(Error::Validation("a network needs at least one node".into()));
        }
        if spec.input_dim == 0 || spec.readout_dim == 0 {
            return Err(Error::Validation("input_dim and readout_dim must be ≥ 1".into()));
        }
        let mut by_id: BTreeMap<&str, &LayerSpec> = BTreeMap::new();
        for layer in &spec.nodes {
            check_id(&layer.layer_id)?;
            if layer.hidden_dim == 0 {
                return Err(Error::Validation(format!(
                    "node `{}` has hidden_dim 0",
                    layer.layer_id
                )));
            }
            if by_id.insert(&layer.layer_id, layer).is_some() {
                return Err(Error::Validation(format!(
                    "duplicate node id `{}`",
                    layer.layer_id
                )));
            }
        }
        let mut preds: BTreeMap<&str, BTreeSet<&str>> = by_id.keys().map(|k| (*k, BTreeSet::new())).collect();
        for e in &spec.edges {
            for end in [&e.from, &e.to] {
                if !by_id.contains_key(end.as_str()) {
                    return Err(Error::Validation(format!(
                        "edge {} -> {} refers to unknown node `{end}`",
                        e.from, e.to
                    )));
                }
            }
            if !preds.get_mut(e.to.as_str()).unwrap().insert(&e.from) {
                return Err(Error::Validation(format!(
                    "duplicate edge {} -> {}",
                    e.from, e.to
                )));
            }
        }
        let order = topological_order(&preds)?;
        let index: BTreeMap<&str, usize> = order.iter().enumerate().map(|(i, n)| (*n, i)).collect();

        if spec.input_nodes.is_empty() {
            return Err(Error::Validation("at least one input node is required".into()));
        }
        let mut inputs = BTreeSet::new();
        for n in &spec.input_nodes {
            let &i = index
                .get(n.as_str())
                .ok_or_else(|| Error::Validation(format!("unknown input node `{n}`")))?;
            inputs.insert(i);
        }
        let output = *index
            .get(spec.output_node.as_str())
            .ok_or_else(|| Error::Validation(format!("unknown output node `{}`", spec.output_node)))?;

        let mut nodes: Vec<Node> = order
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let l = by_id[id];
                Node {
                    id: l.layer_id.clone(),
                    dim: l.hidden_dim,
                    activation: l.activation,
                    recurrent: l.has_recurrence,
                    is_input: inputs.contains(&i),
                    preds: preds[id].iter().map(|p| index[p]).collect(),
                    pred_groups: Vec::new(),
                    succs: Vec::new(),
                    input_group: None,
                    recurrent_group: None,
                    bias_group: 0,
                }
            })
            .collect();
        for n in 0..nodes.len() {
            nodes[n].preds.sort_unstable();
            for p in nodes[n].preds.clone() {
                nodes[p].succs.push(n);
            }
        }

        // Reachability from the input nodes.
        let mut reached = vec![false; nodes.len()];
        for n in 0..nodes.len() {
            reached[n] = nodes[n].is_input || nodes[n].preds.iter().any(|&p| reached[p]);
        }
        if let Some(n) = reached.iter().position(|r| !r) {
            return Err(Error::Validation(format!(
                "node `{}` is not reachable from any input node",
                nodes[n].id
            )));
        }

        // Canonical group order: per node (topological) input, edges, recurrent, bias; then readout.
        let mut groups = Vec::new();
        for n in 0..nodes.len() {
            let (id, dim) = (nodes[n].id.clone(), nodes[n].dim);
            if nodes[n].is_input {
                nodes[n].input_group = Some(groups.len());
                groups.push(GroupInfo {
                    id: ParamGroupId::Input(id.clone()),
                    rows: dim,
                    cols: spec.input_dim,
                    home: Some(n),
                    source: GroupSource::Input,
                });
            }
            for k in 0..nodes[n].preds.len() {
                let p = nodes[n].preds[k];
                nodes[n].pred_groups.push(groups.len());
                groups.push(GroupInfo {
                    id: ParamGroupId::edge(nodes[p].id.clone(), id.clone()),
                    rows: dim,
                    cols: nodes[p].dim,
                    home: Some(n),
                    source: GroupSource::Pred(p),
                });
            }
            if nodes[n].recurrent {
                nodes[n].recurrent_group = Some(groups.len());
                groups.push(GroupInfo {
                    id: ParamGroupId::Recurrent(id.clone()),
                    rows: dim,
                    cols: dim,
                    home: Some(n),
                    source: GroupSource::Recurrent,
                });
            }
            nodes[n].bias_group = groups.len();
            groups.push(GroupInfo {
                id: ParamGroupId::Bias(id),
                rows: dim,
                cols: 1,
                home: Some(n),
                source: GroupSource::Bias,
            });
        }
        let readout_group = groups.len();
        groups.push(GroupInfo {
            id: ParamGroupId::Readout,
            rows: spec.readout_dim,
            cols: nodes[output].dim,
            home: None,
            source: GroupSource::Readout,
        });

        let mut net = Network {
            topology: Topology::Dag,
            input_dim: spec.input_dim,
            readout_dim: spec.readout_dim,
            loss_timesteps: spec.loss_timesteps,
            trace_mode: spec.trace_mode,
            seed: spec.seed,
            nodes,
            groups,
            output,
            readout_group,
            tracked: Vec::new(),
        };
        net.tracked = match &spec.tracked_groups {
            TrackedGroups::Default => {
                let first_input = net.nodes.iter().position(|n| n.is_input).unwrap();
                vec![net.nodes[first_input].input_group.unwrap()]
            }
            TrackedGroups::All => (0..net.groups.len()).collect(),
            TrackedGroups::Explicit(ids) => {
                if ids.is_empty() {
                    return Err(Error::Validation("tracked_groups must not be empty".into()));
                }
                let mut out = Vec::new();
                for id in ids {
                    let g = net
                        .group_index(id)
                        .ok_or_else(|| Error::Validation(format!("tracked group `{id}` does not exist")))?;
                    if out.contains(&g) {
                        return Err(Error::Validation(format!("tracked group `{id}` listed twice")));
                    }
                    out.push(g);
                }
                out
            }
        };
        if net.trace_mode == TraceMode::DiagEverywhere {
            let w = net.nodes[0].dim;
            if let Some(n) = net.nodes.iter().find(|n| n.dim != w) {
                return Err(Error::Validation(format!(
                    "trace_mode diag_everywhere requires equal layer widths; `{}` has width {} but `{}` has width {w}",
                    n.id, n.dim, net.nodes[0].id
                )));
            }
        }
        Ok(net)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, n: usize) -> &Node {
        &self.nodes[n]
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn output_node(&self) -> usize {
        self.output
    }

    pub fn groups(&self) -> &[GroupInfo] {
        &self.groups
    }

    pub fn group(&self, g: usize) -> &GroupInfo {
        &self.groups[g]
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn group_index(&self, id: &ParamGroupId) -> Option<usize> {
        self.groups.iter().position(|g| g.id == *id)
    }

    pub fn readout_group(&self) -> usize {
        self.readout_group
    }

    /// Group indices with gradient pipelines, in tracked order.
    pub fn tracked(&self) -> &[usize] {
        &self.tracked
    }

    pub fn tracked_ids(&self) -> Vec<ParamGroupId> {
        self.tracked.iter().map(|&g| self.groups[g].id.clone()).collect()
    }

    pub fn all_group_indices(&self) -> Vec<usize> {
        (0..self.groups.len()).collect()
    }

    /// Replaces the tracked set.
    pub fn with_tracked(mut self, ids: &[ParamGroupId]) -> Result<Self> {
        let mut tracked = Vec::new();
        for id in ids {
            tracked.push(
                self.group_index(id)
                    .ok_or_else(|| Error::Argument(format!("no parameter group `{id}`")))?,
            );
        }
        if tracked.is_empty() {
            return Err(Error::Argument("tracked set must not be empty".into()));
        }
        self.tracked = tracked;
        Ok(self)
    }

    pub fn with_all_tracked(mut self) -> Self {
        self.tracked = self.all_group_indices();
        self
    }

    pub fn with_trace_mode(mut self, mode: TraceMode) -> Result<Self> {
        if mode == TraceMode::DiagEverywhere {
            let w = self.nodes[0].dim;
            if self.nodes.iter().any(|n| n.dim != w) {
                return Err(Error::Validation(
                    "trace_mode diag_everywhere requires equal layer widths".into(),
                ));
            }
        }
        self.trace_mode = mode;
        Ok(self)
    }

    pub fn with_loss_timesteps(mut self, lt: LossTimesteps) -> Self {
        self.loss_timesteps = lt;
        self
    }

    /// Total number of hidden units.
    pub fn state_size(&self) -> usize {
        self.nodes.iter().map(|n| n.dim).sum()
    }

    /// `descends[a][b]`: there is a directed path (possibly empty) from `a` to `b`.
    pub fn descendants(&self, from: usize) -> Vec<bool> {
        let mut out = vec![false; self.nodes.len()];
        out[from] = true;
        for n in from + 1..self.nodes.len() {
            out[n] = self.nodes[n].preds.iter().any(|&p| out[p]);
        }
        out
    }

    /// Nodes that can reach the output node.
    pub fn ancestors_of_output(&self) -> Vec<bool> {
        let mut out = vec![false; self.nodes.len()];
        out[self.output] = true;
        for n in (0..self.output).rev() {
            out[n] = self.nodes[n].succs.iter().any(|&s| out[s]);
        }
        out
    }

    /// Nodes on a directed path from `home` to the output node, ascending.
    pub fn path_nodes(&self, home: usize) -> Vec<usize> {
        let down = self.descendants(home);
        let up = self.ancestors_of_output();
        (0..self.nodes.len()).filter(|&n| down[n] && up[n]).collect()
    }

    pub fn zero_states(&self) -> Vec<Vec<f64>> {
        self.nodes.iter().map(|n| vec![0.0; n.dim]).collect()
    }

    pub fn loss_enabled(&self, t: usize, horizon: usize) -> bool {
        match self.loss_timesteps {
            LossTimesteps::EveryStep => true,
            LossTimesteps::FinalOnly => t + 1 == horizon,
        }
    }

    /// Checks an episode's shapes. `targets` has one entry per step, or a
    /// single entry when the loss is final-only.
    pub fn check_episode(&self, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<()> {
        if inputs.is_empty() {
            return Err(Error::Argument("input sequence is empty".into()));
        }
        let ok_len = targets.len() == inputs.len()
            || (targets.len() == 1 && self.loss_timesteps == LossTimesteps::FinalOnly);
        if !ok_len {
            return Err(Error::Argument(format!(
                "{} targets for {} steps",
                targets.len(),
                inputs.len()
            )));
        }
        for (t, x) in inputs.iter().enumerate() {
            if x.len() != self.input_dim {
                return Err(Error::shape(
                    "episode input",
                    format!("step {} length {}", t + 1, x.len()),
                    format!("input_dim {}", self.input_dim),
                ));
            }
        }
        for (t, y) in targets.iter().enumerate() {
            if y.len() != self.readout_dim {
                return Err(Error::shape(
                    "episode target",
                    format!("target {} length {}", t + 1, y.len()),
                    format!("readout_dim {}", self.readout_dim),
                ));
            }
        }
        Ok(())
    }

    /// Target for step `t` (0-based) if the loss is taken there.
    pub fn target_at<'a>(&self, targets: &'a [Vec<f64>], t: usize, horizon: usize) -> Option<&'a [f64]> {
        if !self.loss_enabled(t, horizon) {
            return None;
        }
        Some(if targets.len() == 1 {
            &targets[0]
        } else {
            &targets[t]
        })
    }

    /// One step of the dynamics. `prev` holds `h^n_{t−1}` per node.
    pub fn forward_step(&self, params: &Params, prev: &[Vec<f64>], x: &[f64]) -> Result<StepState> {
        if x.len() != self.input_dim {
            return Err(Error::shape(
                "forward_step",
                format!("x length {}", x.len()),
                format!("input_dim {}", self.input_dim),
            ));
        }
        if prev.len() != self.nodes.len() || prev.iter().zip(&self.nodes).any(|(h, n)| h.len() != n.dim) {
            return Err(Error::shape(
                "forward_step",
                format!("{} previous state vectors", prev.len()),
                format!("{} nodes", self.nodes.len()),
            ));
        }
        let mut preacts = Vec::with_capacity(self.nodes.len());
        let mut states: Vec<Vec<f64>> = Vec::with_capacity(self.nodes.len());
        let mut derivs = Vec::with_capacity(self.nodes.len());
        for (n, node) in self.nodes.iter().enumerate() {
            let mut a: Vec<f64> = params.at(node.bias_group).as_slice().to_vec();
            if let Some(g) = node.input_group {
                add_into(&mut a, &params.at(g).matvec(x)?);
            }
            for (&p, &g) in node.preds.iter().zip(&node.pred_groups) {
                add_into(&mut a, &params.at(g).matvec(&states[p])?);
            }
            if let Some(g) = node.recurrent_group {
                add_into(&mut a, &params.at(g).matvec(&prev[n])?);
            }
            let (h, d) = activation_eval(node.activation, &a);
            preacts.push(a);
            states.push(h);
            derivs.push(d);
        }
        Ok(StepState {
            preacts,
            states,
            derivs,
        })
    }

    pub fn readout(&self, params: &Params, step: &StepState) -> Result<Vec<f64>> {
        params.at(self.readout_group).matvec(&step.states[self.output])
    }

    /// Runs a whole episode, keeping every step.
    pub fn rollout(
        &self,
        params: &Params,
        inputs: &[Vec<f64>],
        targets: &[Vec<f64>],
    ) -> Result<RolloutRecord> {
        self.check_episode(inputs, targets)?;
        let horizon = inputs.len();
        let mut prev = self.zero_states();
        let mut steps = Vec::with_capacity(horizon);
        let mut outputs = Vec::with_capacity(horizon);
        let mut step_losses = Vec::with_capacity(horizon);
        let mut total_loss = 0.0;
        for (t, x) in inputs.iter().enumerate() {
            let step = self.forward_step(params, &prev, x)?;
            let y = self.readout(params, &step)?;
            let loss = self.target_at(targets, t, horizon).map(|target| mse(&y, target));
            if let Some(l) = loss {
                total_loss += l;
            }
            prev = step.states.clone();
            steps.push(step);
            outputs.push(y);
            step_losses.push(loss);
        }
        Ok(RolloutRecord {
            inputs: inputs.to_vec(),
            steps,
            outputs,
            step_losses,
            total_loss,
        })
    }

    pub fn loss(&self, params: &Params, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
        Ok(self.rollout(params, inputs, targets)?.total_loss)
    }

    /// `∂h^n_t/∂h^n_{t−1} = diag(f'(a^n_t)) W_rec^n`, or `None` without recurrence.
    pub fn recurrent_jacobian(
        &self,
        params: &Params,
        n: usize,
        derivs: &[f64],
        ops: &mut OpCounter,
    ) -> Option<Matrix> {
        let g = self.nodes[n].recurrent_group?;
        Some(scale_rows(params.at(g), derivs, ops))
    }

    /// `∂h^n_t/∂h^p_t = diag(f'(a^n_t)) W^{n←p}` for the `k`-th predecessor.
    pub fn edge_jacobian(
        &self,
        params: &Params,
        n: usize,
        k: usize,
        derivs: &[f64],
        ops: &mut OpCounter,
    ) -> Matrix {
        scale_rows(params.at(self.nodes[n].pred_groups[k]), derivs, ops)
    }

    /// The vector group `g`'s matrix multiplies at this step.
    pub fn group_operand<'a>(
        &self,
        g: usize,
        x: &'a [f64],
        step: &'a StepState,
        prev: &'a [Vec<f64>],
    ) -> &'a [f64] {
        const ONE: &[f64] = &[1.0];
        match self.groups[g].source {
            GroupSource::Input => x,
            GroupSource::Pred(p) => &step.states[p],
            GroupSource::Recurrent => &prev[self.groups[g].home.unwrap()],
            GroupSource::Bias => ONE,
            GroupSource::Readout => &step.states[self.output],
        }
    }

    /// Counts for the unrolled graph over `horizon` steps.
    pub fn unrolled_counts(&self, horizon: usize) -> UnrolledCounts {
        let state_nodes = self.nodes.len() * horizon;
        let loss_steps = (0..horizon).filter(|&t| self.loss_enabled(t, horizon)).count();
        let rec_edges: usize = self.nodes.iter().filter(|n| n.recurrent).count() * horizon.saturating_sub(1);
        let cross_edges: usize = self.nodes.iter().map(|n| n.preds.len()).sum::<usize>() * horizon;
        UnrolledCounts {
            state_nodes,
            output_nodes: loss_steps,
            loss_nodes: 1,
            edges: rec_edges + cross_edges + 2 * loss_steps,
        }
    }
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

/// `diag(d) · W`; costs one multiply per entry.
pub(crate) fn scale_rows(w: &Matrix, d: &[f64], ops: &mut OpCounter) -> Matrix {
    ops.add_flops(w.len() as u64);
    Matrix::from_fn(w.rows(), w.cols(), |r, c| d[r] * w[(r, c)])
}

pub fn mse(y: &[f64], target: &[f64]) -> f64 {
    0.5 * y.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
}

/// Kahn's algorithm with lexicographic tie-breaking, so the order depends only
/// on the node/edge sets and not on declaration order.
fn topological_order<'a>(preds: &BTreeMap<&'a str, BTreeSet<&'a str>>) -> Result<Vec<&'a str>> {
    let mut indegree: BTreeMap<&str, usize> = preds.iter().map(|(k, v)| (*k, v.len())).collect();
    let mut succs: BTreeMap<&str, Vec<&str>> = preds.keys().map(|k| (*k, Vec::new())).collect();
    for (to, ps) in preds {
        for p in ps {
            succs.get_mut(p).unwrap().push(to);
        }
    }
    let mut ready: BTreeSet<&str> = indegree
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(k, _)| *k)
        .collect();
    let mut order = Vec::with_capacity(preds.len());
    while let Some(n) = ready.pop_first() {
        order.push(n);
        for s in &succs[n] {
            let d = indegree.get_mut(s).unwrap();
            *d -= 1;
            if *d == 0 {
                ready.insert(s);
            }
        }
    }
    if order.len() == preds.len() {
        return Ok(order);
    }
    // Walk predecessors among unprocessed nodes until one repeats.
    let remaining: BTreeSet<&str> = indegree
        .iter()
        .filter(|(_, d)| **d > 0)
        .map(|(k, _)| *k)
        .collect();
    let mut walk = vec![*remaining.iter().next().unwrap()];
    loop {
        let cur = *walk.last().unwrap();
        let next = *preds[cur].iter().find(|p| remaining.contains(*p)).unwrap();
        if let Some(pos) = walk.iter().position(|n| *n == next) {
            let mut cycle: Vec<&str> = walk[pos..].to_vec();
            cycle.reverse();
            cycle.push(cycle[0]);
            return Err(Error::Validation(format!(
                "edge relation has a cycle: {}",
                cycle.join(" -> ")
            )));
        }
        walk.push(next);
    }
}
