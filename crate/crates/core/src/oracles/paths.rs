//! Brute-force gradient-path enumeration over the unrolled time × depth lattice.
//!
//! Walking backwards from the readout at a loss step, every lattice node
//! `(n, t)` offers one move back in time, `(n, t−1)` through
//! `∂h^n_t/∂h^n_{t−1}`, and one move down per incoming edge, `(p, t)` through
//! `∂h^n_t/∂h^p_t`. A path ends wherever it stands on the group's home node,
//! contributing its Jacobian product times the instantaneous `∂h/∂θ`. The
//! gradient is the plain sum over all paths.

use std::fmt;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, OpCounter};
use crate::network::{GroupSource, Network, ParamGroupId, Params, RolloutRecord};
use crate::oracles::GradientSet;

pub const DEFAULT_PATH_CAP: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatticeNode {
    pub node: String,
    /// 1-based timestep.
    pub t: usize,
}

impl fmt::Display for LatticeNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.node, self.t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientPath {
    pub group: ParamGroupId,
    /// 1-based step whose loss this path carries.
    pub loss_step: usize,
    /// From the readout's node at `loss_step` down to the insertion point.
    /// Consecutive entries differ by one step back in time or one edge down.
    pub nodes: Vec<LatticeNode>,
    /// This path's additive contribution to `dL/dθ`, shaped like the group.
    pub contribution: Matrix,
}

impl fmt::Display for GradientPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} loss@{}:", self.group, self.loss_step)?;
        for (i, n) in self.nodes.iter().enumerate() {
            if i == 0 {
                write!(f, " {n}")?;
            } else {
                write!(f, " -> {n}")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PathEnumeration {
    pub paths: Vec<GradientPath>,
    pub gradient: GradientSet,
}

/// Number of gradient paths per tracked group for an episode of `horizon` steps.
pub fn count_gradient_paths(net: &Network, horizon: usize, group: usize) -> u128 {
    let loss_steps: Vec<usize> = (0..horizon).filter(|&t| net.loss_enabled(t, horizon)).collect();
    let Some(home) = net.group(group).home else {
        return loss_steps.len() as u128;
    };
    let n_nodes = net.nodes().len();
    // count[t][n]: paths from (n, t) that end on the home node.
    let mut count = vec![vec![0u128; n_nodes]; horizon];
    for t in 0..horizon {
        for n in 0..n_nodes {
            let node = net.node(n);
            let mut c = u128::from(n == home);
            if node.recurrent && t > 0 {
                c = c.saturating_add(count[t - 1][n]);
            }
            for &p in &node.preds {
                c = c.saturating_add(count[t][p]);
            }
            count[t][n] = c;
        }
    }
    let out = net.output_node();
    loss_steps
        .iter()
        .fold(0u128, |acc, &t| acc.saturating_add(count[t][out]))
}

/// Enumerates every gradient path for every tracked group and sums them.
/// Fails before doing any work if the total path count exceeds `cap`.
pub fn enumerate_gradient_paths(
    net: &Network,
    params: &Params,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    cap: u128,
) -> Result<PathEnumeration> {
    let record = net.rollout(params, inputs, targets)?;
    let horizon = record.len();
    let total: u128 = net.tracked().iter().fold(0u128, |acc, &g| {
        acc.saturating_add(count_gradient_paths(net, horizon, g))
    });
    if total > cap {
        return Err(Error::ResourceLimit {
            what: "gradient path",
            count: total,
            cap,
        });
    }

    let mut walker = Walker {
        net,
        params,
        record: &record,
        zeros: net.zero_states(),
        paths: Vec::new(),
        ops: OpCounter::new(),
    };
    for &g in net.tracked() {
        for t in 0..horizon {
            let Some(target) = net.target_at(targets, t, horizon) else {
                continue;
            };
            let err: Vec<f64> = record.outputs[t]
                .iter()
                .zip(target)
                .map(|(y, y_star)| y - y_star)
                .collect();
            walker.start(g, t, &err)?;
        }
    }

    let mut gradient = GradientSet::zeros_for(net, net.tracked());
    for p in &walker.paths {
        gradient
            .get_mut(&p.group)
            .expect("path group is tracked")
            .add_assign(&p.contribution)?;
    }
    Ok(PathEnumeration {
        paths: walker.paths,
        gradient,
    })
}

struct Walker<'a> {
    net: &'a Network,
    params: &'a Params,
    record: &'a RolloutRecord,
    zeros: Vec<Vec<f64>>,
    paths: Vec<GradientPath>,
    ops: OpCounter,
}

impl Walker<'_> {
    fn start(&mut self, g: usize, t: usize, err: &[f64]) -> Result<()> {
        let net = self.net;
        let out = net.output_node();
        let info = net.group(g);
        let first = LatticeNode {
            node: net.node(out).id.clone(),
            t: t + 1,
        };
        if info.source == GroupSource::Readout {
            let mut contribution = Matrix::zeros(info.rows, info.cols);
            contribution.add_outer(err, &self.record.steps[t].states[out])?;
            self.paths.push(GradientPath {
                group: info.id.clone(),
                loss_step: t + 1,
                nodes: vec![first],
                contribution,
            });
            return Ok(());
        }
        let home = info.home.expect("non-readout group has a home");
        let reaches_home = net.descendants(home);
        // Row vector dL/dh^out_t.
        let v = self.params.at(net.readout_group()).t_matvec(err)?;
        let mut trail = vec![first];
        self.walk(g, home, &reaches_home, t, out, t, v, &mut trail)
    }

    #[allow(clippy::too_many_arguments)]
    fn walk(
        &mut self,
        g: usize,
        home: usize,
        reaches_home: &[bool],
        loss_t: usize,
        n: usize,
        t: usize,
        v: Vec<f64>,
        trail: &mut Vec<LatticeNode>,
    ) -> Result<()> {
        let net = self.net;
        let step = &self.record.steps[t];
        let prev = if t == 0 {
            &self.zeros
        } else {
            &self.record.steps[t - 1].states
        };
        if n == home {
            let info = net.group(g);
            let u = net.group_operand(g, &self.record.inputs[t], step, prev);
            let dv: Vec<f64> = v.iter().zip(&step.derivs[n]).map(|(a, d)| a * d).collect();
            let mut contribution = Matrix::zeros(info.rows, info.cols);
            contribution.add_outer(&dv, u)?;
            self.paths.push(GradientPath {
                group: info.id.clone(),
                loss_step: loss_t + 1,
                nodes: trail.clone(),
                contribution,
            });
        }
        let node = net.node(n);
        if t > 0 {
            if let Some(j) = net.recurrent_jacobian(self.params, n, &step.derivs[n], &mut self.ops) {
                let v_next = j.t_matvec(&v)?;
                trail.push(LatticeNode {
                    node: node.id.clone(),
                    t,
                });
                self.walk(g, home, reaches_home, loss_t, n, t - 1, v_next, trail)?;
                trail.pop();
            }
        }
        for (k, &p) in node.preds.iter().enumerate() {
            if !reaches_home[p] {
                continue;
            }
            let j = net.edge_jacobian(self.params, n, k, &step.derivs[n], &mut self.ops);
            let v_next = j.t_matvec(&v)?;
            trail.push(LatticeNode {
                node: net.node(p).id.clone(),
                t: t + 1,
            });
            self.walk(g, home, reaches_home, loss_t, p, t, v_next, trail)?;
            trail.pop();
        }
        Ok(())
    }
}
