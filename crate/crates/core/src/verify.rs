//! Cross-oracle verification suite behind `deep-eprop verify`.
//!
//! Each check runs a battery of seeded random instances and records the worst
//! error seen. Instances are independent, so batteries run on the worker pool;
//! results are collected in instance order, which keeps reports reproducible.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::bench::{emit_scaling_report, run_sweep, Dim, Metric, SweepConfig};
use crate::engine::{episode_gradient as engine_gradient, Fault, ForwardLearner, Propagation};
use crate::eprop::TraceMode;
use crate::error::{Error, Result};
use crate::linalg::{ActivationKind, Matrix, OpCounter};
use crate::network::{
    EdgeSpec, GraphSpec, LayerSpec, LossKind, LossTimesteps, Network, NetworkSpec, ParamGroupId, ParamKind,
    Params, TrackedGroups,
};
use crate::oracles::{
    bptt_gradient, count_gradient_paths, enumerate_gradient_paths, finite_diff_gradient, relative_l2,
    GradientSet, DEFAULT_FD_STEP, DEFAULT_PATH_CAP,
};
use crate::pool::worker_pool;
use crate::trainer::{cosine, Algorithm};

pub const DEEP_RTRL_TOLERANCE: f64 = 1e-9;
pub const FINITE_DIFF_TOLERANCE: f64 = 1e-5;
pub const PATH_TOLERANCE: f64 = 1e-10;
pub const EPROP_EXACT_TOLERANCE: f64 = 1e-9;

/// A network with parameters and one episode of data.
#[derive(Debug, Clone)]
pub struct Instance {
    pub net: Network,
    pub params: Params,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

/// Ranges for random chain instances (inclusive).
#[derive(Debug, Clone, Copy)]
pub struct ChainRanges {
    pub layers: (usize, usize),
    pub hidden: (usize, usize),
    pub steps: (usize, usize),
    /// Pick activations from tanh/sigmoid/linear only (smooth everywhere).
    pub smooth: bool,
    /// All layers share one width.
    pub equal_widths: bool,
}

impl Default for ChainRanges {
    fn default() -> Self {
        ChainRanges {
            layers: (1, 4),
            hidden: (2, 8),
            steps: (2, 12),
            smooth: false,
            equal_widths: false,
        }
    }
}

fn pick_activation(rng: &mut ChaCha8Rng, smooth: bool) -> ActivationKind {
    let kinds: &[ActivationKind] = if smooth {
        &[
            ActivationKind::Tanh,
            ActivationKind::Sigmoid,
            ActivationKind::Linear,
        ]
    } else {
        &ActivationKind::ALL
    };
    *kinds.choose(rng).unwrap()
}

fn pick_loss(rng: &mut ChaCha8Rng) -> LossTimesteps {
    if rng.gen_bool(0.5) {
        LossTimesteps::FinalOnly
    } else {
        LossTimesteps::EveryStep
    }
}

/// Uniform in ±`scale`/√fan_in for weights and ±0.5 for biases.
pub fn random_params(net: &Network, rng: &mut ChaCha8Rng, scale: f64) -> Result<Params> {
    let named = net
        .groups()
        .iter()
        .map(|g| {
            let bound = if g.id.kind() == ParamKind::Bias {
                0.5
            } else {
                scale / (g.cols as f64).sqrt()
            };
            let m = Matrix::from_fn(g.rows, g.cols, |_, _| rng.gen_range(-bound..=bound));
            (g.id.clone(), m)
        })
        .collect();
    Params::from_named(net, named)
}

/// Random inputs in [−1, 1] and targets matching the network's loss steps.
pub fn random_episode(net: &Network, rng: &mut ChaCha8Rng, steps: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let inputs = (0..steps)
        .map(|_| (0..net.input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let n_targets = match net.loss_timesteps {
        LossTimesteps::FinalOnly => 1,
        LossTimesteps::EveryStep => steps,
    };
    let targets = (0..n_targets)
        .map(|_| (0..net.readout_dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    (inputs, targets)
}

pub fn random_chain(seed: u64, ranges: ChainRanges) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = rng.gen_range(ranges.layers.0..=ranges.layers.1);
    let t = rng.gen_range(ranges.steps.0..=ranges.steps.1);
    let shared = rng.gen_range(ranges.hidden.0..=ranges.hidden.1);
    let layers: Vec<LayerSpec> = (0..l)
        .map(|i| {
            let h = if ranges.equal_widths {
                shared
            } else {
                rng.gen_range(ranges.hidden.0..=ranges.hidden.1)
            };
            LayerSpec::new(format!("l{}", i + 1), h, pick_activation(&mut rng, ranges.smooth))
        })
        .collect();
    let spec = NetworkSpec {
        input_dim: rng.gen_range(1..=3),
        layers,
        readout_dim: rng.gen_range(1..=2),
        loss_kind: LossKind::Mse,
        loss_timesteps: pick_loss(&mut rng),
        tracked_groups: TrackedGroups::All,
        trace_mode: TraceMode::default(),
        seed,
    };
    let net = Network::from_chain(&spec)?;
    let params = random_params(&net, &mut rng, 1.5)?;
    let (inputs, targets) = random_episode(&net, &mut rng, t);
    Ok(Instance {
        net,
        params,
        inputs,
        targets,
    })
}

/// Random DAG with 2 to `max_nodes` nodes. Node `k` gets at least one
/// predecessor among earlier nodes and every non-output node at least one
/// successor, so all nodes lie on a path to the output.
pub fn random_dag(seed: u64, max_nodes: usize, steps: (usize, usize)) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=max_nodes.max(2));
    let ids: Vec<String> = (0..n).map(|i| format!("n{i}")).collect();
    let nodes: Vec<LayerSpec> = ids
        .iter()
        .map(|id| {
            let mut layer =
                LayerSpec::new(id.clone(), rng.gen_range(2..=5), pick_activation(&mut rng, false));
            if rng.gen_bool(0.25) {
                layer = layer.without_recurrence();
            }
            layer
        })
        .collect();
    let mut has_edge = vec![vec![false; n]; n];
    for j in 1..n {
        has_edge[rng.gen_range(0..j)][j] = true;
        for row in has_edge.iter_mut().take(j) {
            if rng.gen_bool(0.3) {
                row[j] = true;
            }
        }
    }
    for i in 0..n - 1 {
        if !has_edge[i].iter().any(|e| *e) {
            has_edge[i][rng.gen_range(i + 1..n)] = true;
        }
    }
    let mut edges = Vec::new();
    for (i, row) in has_edge.iter().enumerate() {
        for (j, e) in row.iter().enumerate() {
            if *e {
                edges.push(EdgeSpec {
                    from: ids[i].clone(),
                    to: ids[j].clone(),
                });
            }
        }
    }
    // Shuffle declaration order; the network must not depend on it.
    edges.shuffle(&mut rng);
    let mut input_nodes = vec![ids[0].clone()];
    for id in &ids[1..] {
        if rng.gen_bool(0.3) {
            input_nodes.push(id.clone());
        }
    }
    let spec = GraphSpec {
        input_dim: rng.gen_range(1..=3),
        nodes,
        edges,
        input_nodes,
        output_node: ids[n - 1].clone(),
        readout_dim: rng.gen_range(1..=2),
        loss_kind: LossKind::Mse,
        loss_timesteps: pick_loss(&mut rng),
        tracked_groups: TrackedGroups::All,
        trace_mode: TraceMode::default(),
        seed,
    };
    let net = Network::from_graph(&spec)?;
    let params = random_params(&net, &mut rng, 1.5)?;
    let t = rng.gen_range(steps.0..=steps.1);
    let (inputs, targets) = random_episode(&net, &mut rng, t);
    Ok(Instance {
        net,
        params,
        inputs,
        targets,
    })
}

/// Zeroes the off-diagonal of every group of the given kinds (square groups only).
pub fn make_diagonal(net: &Network, params: &mut Params, kinds: &[ParamKind]) {
    for g in net.groups() {
        if kinds.contains(&g.id.kind()) && g.rows == g.cols {
            let m = params.get_mut(&g.id).unwrap();
            for r in 0..g.rows {
                for c in 0..g.cols {
                    if r != c {
                        m[(r, c)] = 0.0;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    /// Whether a failure fails the whole run.
    pub required: bool,
    pub passed: bool,
    pub instances: usize,
    pub worst_error: Option<f64>,
    pub tolerance: Option<f64>,
    /// Measured quantities (slopes, quantiles, counts).
    pub measurements: BTreeMap<String, f64>,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str) -> Self {
        CheckResult {
            name: name.into(),
            required: true,
            passed: true,
            instances: 0,
            worst_error: None,
            tolerance: None,
            measurements: BTreeMap::new(),
            detail: String::new(),
        }
    }

    fn errors(name: &str, errors: &[f64], tolerance: f64) -> Self {
        let worst = errors.iter().cloned().fold(0.0f64, f64::max);
        let bad = errors.iter().filter(|e| e.is_nan() || **e > tolerance).count();
        let mut r = CheckResult::new(name);
        r.instances = errors.len();
        r.worst_error = Some(if errors.iter().any(|e| e.is_nan()) {
            f64::INFINITY
        } else {
            worst
        });
        r.tolerance = Some(tolerance);
        r.passed = bad == 0;
        r.detail = format!("{bad} of {} instances above tolerance", errors.len());
        r
    }

    fn fail(&mut self, why: String) {
        self.passed = false;
        if !self.detail.is_empty() {
            self.detail.push_str("; ");
        }
        self.detail.push_str(&why);
    }

    /// One line suitable for logs: `PASS name (worst 1.2e-12 ≤ 1e-9)`.
    pub fn summary_line(&self) -> String {
        let status = if self.passed { "PASS" } else { "FAIL" };
        let mut line = format!("{status} {}", self.name);
        if let (Some(w), Some(t)) = (self.worst_error, self.tolerance) {
            line.push_str(&format!(" (worst {w:.3e}, tolerance {t:.0e})"));
        }
        if !self.detail.is_empty() {
            line.push_str(&format!(": {}", self.detail));
        }
        line
    }
}

/// Runs `f` over `0..n` on the worker pool, keeping order.
fn battery<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    worker_pool()?.install(|| (0..n).into_par_iter().map(&f).collect())
}

fn sub_seed(seed: u64, check: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (check << 32) ^ i as u64
}

fn deep_rtrl(inst: &Instance, fault: Option<Fault>) -> Result<GradientSet> {
    let mut ops = OpCounter::new();
    engine_gradient(
        &inst.net,
        &inst.params,
        &inst.inputs,
        &inst.targets,
        Propagation::Exact,
        fault,
        &mut ops,
    )
}

fn eprop(inst: &Instance, mode: TraceMode, fault: Option<Fault>) -> Result<GradientSet> {
    let mut ops = OpCounter::new();
    engine_gradient(
        &inst.net,
        &inst.params,
        &inst.inputs,
        &inst.targets,
        Propagation::Eprop(mode),
        fault,
        &mut ops,
    )
}

fn bptt(inst: &Instance) -> Result<GradientSet> {
    bptt_gradient(
        &inst.net,
        &inst.params,
        &inst.inputs,
        &inst.targets,
        &mut OpCounter::new(),
    )
}

/// Exact online gradients match BPTT on random chains and DAGs.
pub fn check_deep_rtrl_vs_bptt(seed: u64, tolerance: f64, fault: Option<Fault>) -> Result<CheckResult> {
    let chains = battery(100, |i| {
        let inst = random_chain(sub_seed(seed, 1, i), ChainRanges::default())?;
        relative_l2(&deep_rtrl(&inst, fault)?, &bptt(&inst)?)
    })?;
    let dags = battery(20, |i| {
        let inst = random_dag(sub_seed(seed, 2, i), 5, (2, 8))?;
        relative_l2(&deep_rtrl(&inst, fault)?, &bptt(&inst)?)
    })?;
    let all: Vec<f64> = chains.iter().chain(&dags).copied().collect();
    let mut r = CheckResult::errors("deep_rtrl_vs_bptt", &all, tolerance);
    r.measurements
        .insert("worst_chain".into(), chains.iter().cloned().fold(0.0, f64::max));
    r.measurements
        .insert("worst_dag".into(), dags.iter().cloned().fold(0.0, f64::max));
    Ok(r)
}

pub fn check_bptt_vs_finite_diff(seed: u64, tolerance: f64) -> Result<CheckResult> {
    let ranges = ChainRanges {
        layers: (1, 3),
        hidden: (2, 4),
        steps: (2, 6),
        smooth: true,
        equal_widths: false,
    };
    let errors = battery(20, |i| {
        let inst = random_chain(sub_seed(seed, 3, i), ranges)?;
        let fd = finite_diff_gradient(
            &inst.net,
            &inst.params,
            &inst.inputs,
            &inst.targets,
            DEFAULT_FD_STEP,
        )?;
        relative_l2(&bptt(&inst)?, &fd)
    })?;
    Ok(CheckResult::errors("bptt_vs_finite_diff", &errors, tolerance))
}

/// Every (L, H, T) with L ≤ 3, H ≤ 3, T ≤ 4.
pub fn check_bptt_vs_paths(seed: u64, tolerance: f64) -> Result<CheckResult> {
    let mut dims = Vec::new();
    for l in 1..=3 {
        for h in 1..=3 {
            for t in 1..=4 {
                dims.push((l, h, t));
            }
        }
    }
    let errors = battery(dims.len(), |i| {
        let (l, h, t) = dims[i];
        let ranges = ChainRanges {
            layers: (l, l),
            hidden: (h, h),
            steps: (t, t),
            smooth: false,
            equal_widths: false,
        };
        let inst = random_chain(sub_seed(seed, 4, i), ranges)?;
        let e = enumerate_gradient_paths(
            &inst.net,
            &inst.params,
            &inst.inputs,
            &inst.targets,
            DEFAULT_PATH_CAP,
        )?;
        relative_l2(&e.gradient, &bptt(&inst)?)
    })?;
    Ok(CheckResult::errors("bptt_vs_paths", &errors, tolerance))
}

fn binomial(n: u128, k: u128) -> u128 {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// Enumerated path counts: T for one layer, 6 for two layers over three
/// steps, and C(T+L−1, L) for every L ≤ 4, T ≤ 6.
pub fn check_path_counts(seed: u64) -> Result<CheckResult> {
    let mut r = CheckResult::new("path_counts");
    for l in 1..=4usize {
        for t in 1..=6usize {
            let dims = vec![(2, ActivationKind::Tanh); l];
            let net = Network::from_chain(&NetworkSpec::chain(1, &dims, 1))?;
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 5, l * 10 + t));
            let params = random_params(&net, &mut rng, 1.0)?;
            let (inputs, targets) = random_episode(&net, &mut rng, t);
            let e = enumerate_gradient_paths(&net, &params, &inputs, &targets, DEFAULT_PATH_CAP)?;
            let got = e.paths.len() as u128;
            let want = binomial((t + l - 1) as u128, l as u128);
            let counted = count_gradient_paths(&net, t, net.tracked()[0]);
            r.instances += 1;
            if got != want || counted != want {
                r.fail(format!(
                    "L={l} T={t}: enumerated {got}, counted {counted}, expected {want}"
                ));
            }
            if l == 1 && got != t as u128 {
                r.fail(format!("L=1 T={t}: {got} paths, expected {t}"));
            }
            if (l, t) == (2, 3) {
                r.measurements.insert("paths_L2_T3".into(), got as f64);
                if got != 6 {
                    r.fail(format!("L=2 T=3: {got} paths, expected 6"));
                }
            }
        }
    }
    if r.passed {
        r.detail = format!("{} (L, T) combinations match", r.instances);
    }
    Ok(r)
}

/// Regimes in which E-prop must equal BPTT: one step, zero recurrence, and
/// diagonal recurrence (plus diagonal cross-layer weights for diag_everywhere).
pub fn check_eprop_exact_regimes(seed: u64, tolerance: f64, fault: Option<Fault>) -> Result<CheckResult> {
    let mut errors_by_regime: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let n = 50;
    let t1 = battery(n, |i| {
        let ranges = ChainRanges {
            layers: (1, 3),
            hidden: (2, 6),
            steps: (1, 1),
            ..ChainRanges::default()
        };
        let inst = random_chain(sub_seed(seed, 6, i), ranges)?;
        relative_l2(
            &eprop(&inst, TraceMode::DiagHomeDenseAbove, fault)?,
            &bptt(&inst)?,
        )
    })?;
    errors_by_regime.insert("single_step", t1);
    let zero = battery(n, |i| {
        let ranges = ChainRanges {
            layers: (1, 3),
            hidden: (2, 6),
            steps: (2, 10),
            ..ChainRanges::default()
        };
        let mut inst = random_chain(sub_seed(seed, 7, i), ranges)?;
        for g in inst.net.groups() {
            if g.id.kind() == ParamKind::RecurrentWeights {
                *inst.params.get_mut(&g.id).unwrap() = Matrix::zeros(g.rows, g.cols);
            }
        }
        relative_l2(
            &eprop(&inst, TraceMode::DiagHomeDenseAbove, fault)?,
            &bptt(&inst)?,
        )
    })?;
    errors_by_regime.insert("zero_recurrence", zero);
    let diag_dense = battery(n, |i| {
        let ranges = ChainRanges {
            layers: (1, 3),
            hidden: (2, 6),
            steps: (2, 10),
            ..ChainRanges::default()
        };
        let mut inst = random_chain(sub_seed(seed, 8, i), ranges)?;
        make_diagonal(&inst.net, &mut inst.params, &[ParamKind::RecurrentWeights]);
        relative_l2(
            &eprop(&inst, TraceMode::DiagHomeDenseAbove, fault)?,
            &bptt(&inst)?,
        )
    })?;
    errors_by_regime.insert("diagonal_recurrence", diag_dense);
    let diag_all = battery(n, |i| {
        let ranges = ChainRanges {
            layers: (1, 3),
            hidden: (2, 6),
            steps: (2, 10),
            equal_widths: true,
            ..ChainRanges::default()
        };
        let mut inst = random_chain(sub_seed(seed, 9, i), ranges)?;
        make_diagonal(
            &inst.net,
            &mut inst.params,
            &[ParamKind::RecurrentWeights, ParamKind::CrossLayerWeights],
        );
        relative_l2(&eprop(&inst, TraceMode::DiagEverywhere, fault)?, &bptt(&inst)?)
    })?;
    errors_by_regime.insert("diagonal_everywhere", diag_all);

    let all: Vec<f64> = errors_by_regime.values().flatten().copied().collect();
    let mut r = CheckResult::errors("eprop_exact_regimes", &all, tolerance);
    for (regime, errs) in &errors_by_regime {
        r.measurements.insert(
            format!("worst_{regime}"),
            errs.iter().cloned().fold(0.0, f64::max),
        );
    }
    Ok(r)
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Cosine between E-prop and BPTT on dense single-layer networks (H = 6,
/// T = 10); the median must be positive.
pub fn check_eprop_alignment(seed: u64) -> Result<CheckResult> {
    let mut cosines = battery(100, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 10, i));
        let net = Network::from_chain(&NetworkSpec::chain(3, &[(6, ActivationKind::Tanh)], 2))?
            .with_tracked(&[
                ParamGroupId::Input("l1".into()),
                ParamGroupId::Recurrent("l1".into()),
            ])?;
        let params = random_params(&net, &mut rng, 1.5)?;
        let (inputs, targets) = random_episode(&net, &mut rng, 10);
        let inst = Instance {
            net,
            params,
            inputs,
            targets,
        };
        let e = eprop(&inst, TraceMode::DiagHomeDenseAbove, None)?;
        let b = bptt(&inst)?;
        Ok(cosine(&e.flatten(), &b.flatten()))
    })?;
    cosines.sort_by(|a, b| a.total_cmp(b));
    let mut r = CheckResult::new("eprop_alignment");
    r.instances = cosines.len();
    let q = |p: f64| cosines[((cosines.len() - 1) as f64 * p).round() as usize];
    let med = median(&cosines);
    for (name, v) in [
        ("min", q(0.0)),
        ("q25", q(0.25)),
        ("median", med),
        ("q75", q(0.75)),
        ("max", q(1.0)),
    ] {
        r.measurements.insert(format!("cosine_{name}"), v);
    }
    r.passed = med > 0.0;
    r.detail = format!("median cosine {med:.4}");
    Ok(r)
}

/// Operation-count scaling of every engine.
pub fn check_complexity(seed: u64) -> Result<CheckResult> {
    let mut r = CheckResult::new("complexity");
    let with_seed = |mut c: SweepConfig| {
        c.seed = seed;
        c
    };

    let rtrl = run_sweep(&with_seed(SweepConfig::new(
        &[Algorithm::Rtrl],
        &[4, 8, 16],
        &[1],
        &[8],
    )))?;
    let slope = emit_scaling_report(&rtrl)
        .find(Algorithm::Rtrl, Metric::FlopsPerStep, Dim::H)
        .map(|f| f.slope)
        .unwrap_or(f64::NAN);
    r.measurements.insert("rtrl_flops_slope_vs_H".into(), slope);
    let ratio = rtrl.rows[1].flops_per_step / rtrl.rows[0].flops_per_step;
    r.measurements.insert("rtrl_flops_ratio_H4_to_H8".into(), ratio);
    if !(3.7..=4.2).contains(&slope) {
        r.fail(format!("rtrl flops slope {slope:.3} outside [3.7, 4.2]"));
    }
    if !(14.0..=18.0).contains(&ratio) {
        r.fail(format!("rtrl flops ratio {ratio:.3} outside [14, 18]"));
    }

    let ep = run_sweep(&with_seed(SweepConfig::new(
        &[Algorithm::DeepEprop],
        &[4],
        &[1, 2, 3],
        &[4, 64, 256],
    )))?;
    for row in &ep.rows {
        let want = (row.layers * row.hidden * row.hidden) as u64;
        if row.peak_trace_values != want {
            r.fail(format!(
                "eprop L={} T={}: {} trace values, expected {want}",
                row.layers, row.steps, row.peak_trace_values
            ));
        }
    }
    let ep_h = run_sweep(&with_seed(SweepConfig::new(
        &[Algorithm::Eprop],
        &[4, 8, 16],
        &[1],
        &[8],
    )))?;
    let slope = emit_scaling_report(&ep_h)
        .find(Algorithm::Eprop, Metric::PeakTraceValues, Dim::H)
        .map(|f| f.slope)
        .unwrap_or(f64::NAN);
    r.measurements.insert("eprop_trace_slope_vs_H".into(), slope);
    if !(1.9..=2.1).contains(&slope) {
        r.fail(format!("eprop trace slope {slope:.3} outside [1.9, 2.1]"));
    }

    let bp = run_sweep(&with_seed(SweepConfig::new(
        &[Algorithm::Bptt],
        &[4],
        &[2],
        &[16, 32],
    )))?;
    let ratio = bp.rows[1].stored_activation_values as f64 / bp.rows[0].stored_activation_values as f64;
    r.measurements
        .insert("bptt_storage_ratio_T_doubled".into(), ratio);
    if !(1.9..=2.1).contains(&ratio) {
        r.fail(format!("bptt storage ratio {ratio:.3} outside [1.9, 2.1]"));
    }

    let dr = run_sweep(&with_seed(SweepConfig::new(
        &[Algorithm::DeepRtrl],
        &[4],
        &[1, 2, 4, 8],
        &[4],
    )))?;
    let slope = emit_scaling_report(&dr)
        .find(Algorithm::DeepRtrl, Metric::PeakTraceValues, Dim::L)
        .map(|f| f.slope)
        .unwrap_or(f64::NAN);
    r.measurements.insert("deep_rtrl_trace_slope_vs_L".into(), slope);
    if !(0.9..=1.1).contains(&slope) {
        r.fail(format!(
            "deep_rtrl trace slope vs L {slope:.3} outside [0.9, 1.1]"
        ));
    }
    r.instances = rtrl.rows.len() + ep.rows.len() + ep_h.rows.len() + bp.rows.len() + dr.rows.len();
    Ok(r)
}

fn bits_equal(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Bitwise snapshot of a learner's traces and hidden state.
fn snapshot(learner: &ForwardLearner<'_>) -> Vec<u64> {
    let mut out = Vec::new();
    for set in learner.trace_sets() {
        for t in &set.traces {
            out.extend(t.matrix().as_slice().iter().map(|v| v.to_bits()));
        }
    }
    for s in learner.states() {
        out.extend(s.iter().map(|v| v.to_bits()));
    }
    out
}

/// Streams an episode one step at a time and compares the state after every
/// step with a batched run over the truncated prefix. Gradients are compared
/// too wherever both runs have seen the same loss steps.
pub fn online_contract_holds(inst: &Instance, propagation: Propagation) -> Result<bool> {
    let net = &inst.net;
    let horizon = inst.inputs.len();
    let every_step = net.loss_timesteps == LossTimesteps::EveryStep;
    let mut streamed = ForwardLearner::new(net, propagation)?;
    for t in 0..horizon {
        streamed.step(
            &inst.params,
            &inst.inputs[t],
            net.target_at(&inst.targets, t, horizon),
        )?;
        let prefix_targets = if every_step {
            inst.targets[..=t].to_vec()
        } else {
            inst.targets.clone()
        };
        let mut batched = ForwardLearner::new(net, propagation)?;
        batched.run(&inst.params, &inst.inputs[..=t], &prefix_targets)?;
        if snapshot(&streamed) != snapshot(&batched) {
            return Ok(false);
        }
        let same_losses = every_step || t + 1 == horizon;
        if same_losses && !bits_equal(&streamed.gradient().flatten(), &batched.gradient().flatten()) {
            return Ok(false);
        }
    }
    Ok(true)
}

pub fn check_online_contract(seed: u64) -> Result<CheckResult> {
    let single = ChainRanges {
        layers: (1, 1),
        hidden: (2, 5),
        steps: (3, 8),
        ..ChainRanges::default()
    };
    let deep = ChainRanges {
        layers: (2, 3),
        hidden: (2, 5),
        steps: (3, 8),
        equal_widths: true,
        ..ChainRanges::default()
    };
    let cases: Vec<(&str, ChainRanges, Propagation)> = vec![
        ("rtrl", single, Propagation::Exact),
        ("deep_rtrl", deep, Propagation::Exact),
        ("eprop", single, Propagation::Eprop(TraceMode::DiagHomeDenseAbove)),
        (
            "deep_eprop/diag_home_dense_above",
            deep,
            Propagation::Eprop(TraceMode::DiagHomeDenseAbove),
        ),
        (
            "deep_eprop/diag_everywhere",
            deep,
            Propagation::Eprop(TraceMode::DiagEverywhere),
        ),
    ];
    let per_case = 6;
    let results = battery(cases.len() * per_case + per_case, |i| {
        if i >= cases.len() * per_case {
            let inst = random_dag(sub_seed(seed, 12, i), 5, (3, 8))?;
            return Ok((
                "deep_rtrl/dag",
                online_contract_holds(&inst, Propagation::Exact)?
                    && online_contract_holds(&inst, Propagation::Eprop(TraceMode::DiagHomeDenseAbove))?,
            ));
        }
        let (name, ranges, propagation) = cases[i / per_case];
        let inst = random_chain(sub_seed(seed, 11, i), ranges)?;
        Ok((name, online_contract_holds(&inst, propagation)?))
    })?;
    let mut r = CheckResult::new("online_contract");
    r.instances = results.len();
    for (name, ok) in results {
        if !ok {
            r.fail(format!("{name}: streamed state differs from batched prefix"));
        }
    }
    if r.passed {
        r.detail = "streamed, batched and truncated runs agree bitwise".into();
    }
    Ok(r)
}

/// Checks on one user-supplied network.
pub fn check_spec(
    net: &Network,
    params: &Params,
    seed: u64,
    steps: usize,
    tolerance: Option<f64>,
    fault: Option<Fault>,
) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (inputs, targets) = random_episode(net, &mut rng, steps);
    let inst = Instance {
        net: net.clone(),
        params: params.clone(),
        inputs,
        targets,
    };
    let reference = bptt(&inst)?;
    let mut out = Vec::new();

    let e = relative_l2(&deep_rtrl(&inst, fault)?, &reference)?;
    out.push(CheckResult::errors(
        "spec_deep_rtrl_vs_bptt",
        &[e],
        tolerance.unwrap_or(DEEP_RTRL_TOLERANCE),
    ));

    let fd = finite_diff_gradient(net, params, &inst.inputs, &inst.targets, DEFAULT_FD_STEP)?;
    out.push(CheckResult::errors(
        "spec_bptt_vs_finite_diff",
        &[relative_l2(&reference, &fd)?],
        tolerance.unwrap_or(FINITE_DIFF_TOLERANCE),
    ));

    match enumerate_gradient_paths(net, params, &inst.inputs, &inst.targets, DEFAULT_PATH_CAP) {
        Ok(paths) => {
            let mut r = CheckResult::errors(
                "spec_bptt_vs_paths",
                &[relative_l2(&paths.gradient, &reference)?],
                tolerance.unwrap_or(PATH_TOLERANCE),
            );
            r.measurements.insert("paths".into(), paths.paths.len() as f64);
            out.push(r);
        }
        Err(Error::ResourceLimit { count, cap, .. }) => {
            let mut r = CheckResult::new("spec_bptt_vs_paths");
            r.required = false;
            r.detail = format!("skipped: {count} paths exceed cap {cap}");
            out.push(r);
        }
        Err(e) => return Err(e),
    }

    let mut align = CheckResult::new("spec_eprop_alignment");
    align.required = false;
    for mode in [TraceMode::DiagHomeDenseAbove, TraceMode::DiagEverywhere] {
        match eprop(&inst, mode, fault) {
            Ok(g) => {
                align.measurements.insert(
                    format!("cosine_{mode}"),
                    cosine(&g.flatten(), &reference.flatten()),
                );
                align
                    .measurements
                    .insert(format!("relative_l2_{mode}"), relative_l2(&g, &reference)?);
                align.instances += 1;
            }
            Err(Error::Validation(msg)) => {
                align.detail = format!("{mode} not applicable: {msg}");
            }
            Err(e) => return Err(e),
        }
    }
    out.push(align);

    let mut online = CheckResult::new("spec_online_contract");
    online.instances = 1;
    if !online_contract_holds(&inst, Propagation::Exact)? {
        online.fail("deep_rtrl streamed state differs from batched prefix".into());
    }
    if !online_contract_holds(&inst, Propagation::Eprop(net.trace_mode))? {
        online.fail("deep_eprop streamed state differs from batched prefix".into());
    }
    out.push(online);
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Replaces every error tolerance when set.
    pub tolerance: Option<f64>,
    #[doc(hidden)]
    pub fault: Option<Fault>,
    /// Skip the built-in battery (spec checks only).
    pub skip_battery: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub seed: u64,
    pub tolerance_override: Option<f64>,
    pub fault: Option<String>,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn failing(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| c.required && !c.passed).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Runs the built-in battery and, if given, the checks on `spec`
/// (`(network, params, steps)`).
pub fn run_verify(opts: &VerifyOptions, spec: Option<(&Network, &Params, usize)>) -> Result<VerifyReport> {
    let tol = |default: f64| opts.tolerance.unwrap_or(default);
    let mut checks = Vec::new();
    if let Some((net, params, steps)) = spec {
        checks.extend(check_spec(
            net,
            params,
            opts.seed,
            steps,
            opts.tolerance,
            opts.fault,
        )?);
    }
    if !opts.skip_battery {
        checks.push(check_deep_rtrl_vs_bptt(
            opts.seed,
            tol(DEEP_RTRL_TOLERANCE),
            opts.fault,
        )?);
        checks.push(check_bptt_vs_finite_diff(opts.seed, tol(FINITE_DIFF_TOLERANCE))?);
        checks.push(check_bptt_vs_paths(opts.seed, tol(PATH_TOLERANCE))?);
        checks.push(check_path_counts(opts.seed)?);
        checks.push(check_eprop_exact_regimes(
            opts.seed,
            tol(EPROP_EXACT_TOLERANCE),
            opts.fault,
        )?);
        checks.push(check_eprop_alignment(opts.seed)?);
        checks.push(check_complexity(opts.seed)?);
        checks.push(check_online_contract(opts.seed)?);
    }
    let passed = checks.iter().all(|c| c.passed || !c.required);
    Ok(VerifyReport {
        passed,
        seed: opts.seed,
        tolerance_override: opts.tolerance,
        fault: opts.fault.map(|f| format!("{f:?}")),
        checks,
    })
}
