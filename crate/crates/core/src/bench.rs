//! Operation-counted scaling sweeps.
//!
//! Every sweep point is a chain of `L` tanh layers of width `H` with scalar
//! input and readout, tracking the recurrent weights of the bottom layer
//! (`H²` parameters), run for one episode of `T` steps with a final-step loss.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::eprop::TraceMode;
use crate::error::{Error, Result};
use crate::linalg::{ActivationKind, OpCounter};
use crate::network::{init_params, Network, NetworkSpec, ParamGroupId};
use crate::pool::worker_pool;
use crate::trainer::{episode_gradient, Algorithm};

/// Default cap on trace or activation values held by one sweep point.
pub const DEFAULT_VALUE_CAP: u64 = 50_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub algorithms: Vec<Algorithm>,
    pub hidden: Vec<usize>,
    pub layers: Vec<usize>,
    pub steps: Vec<usize>,
    pub seed: u64,
    pub trace_mode: TraceMode,
    /// Run points concurrently; wall time is then not recorded.
    pub parallel: bool,
    /// Points whose estimated storage exceeds this are skipped.
    pub value_cap: u64,
}

impl SweepConfig {
    pub fn new(algorithms: &[Algorithm], hidden: &[usize], layers: &[usize], steps: &[usize]) -> Self {
        SweepConfig {
            algorithms: algorithms.to_vec(),
            hidden: hidden.to_vec(),
            layers: layers.to_vec(),
            steps: steps.to_vec(),
            seed: 0,
            trace_mode: TraceMode::DiagEverywhere,
            parallel: false,
            value_cap: DEFAULT_VALUE_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub algorithm: Algorithm,
    pub hidden: usize,
    pub layers: usize,
    pub steps: usize,
    pub flops_per_step: f64,
    pub peak_trace_values: u64,
    pub stored_activation_values: u64,
    pub wall_seconds: Option<f64>,
    /// Empty for completed points; the reason for skipped ones.
    pub note: String,
}

impl SweepRow {
    pub fn skipped(&self) -> bool {
        !self.note.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

fn sweep_network(h: usize, l: usize) -> Result<Network> {
    let dims = vec![(h, ActivationKind::Tanh); l];
    Network::from_chain(&NetworkSpec::chain(1, &dims, 1))?
        .with_tracked(&[ParamGroupId::Recurrent("l1".into())])
}

/// Values the point would hold at peak, computed from dims alone.
fn estimated_values(alg: Algorithm, mode: TraceMode, h: usize, l: usize, t: usize) -> u128 {
    let (h, l, t) = (h as u128, l as u128, t as u128);
    let p = h * h;
    match alg {
        Algorithm::Bptt => t * (2 + 2 * h * l),
        Algorithm::Rtrl | Algorithm::DeepRtrl => l * h * p,
        Algorithm::Eprop => p + (l - 1) * h * p,
        Algorithm::DeepEprop => match mode {
            TraceMode::DiagEverywhere => l * p,
            TraceMode::DiagHomeDenseAbove => p + (l - 1) * h * p,
        },
    }
}

fn run_point(
    cfg: &SweepConfig,
    alg: Algorithm,
    h: usize,
    l: usize,
    t: usize,
    timed: bool,
) -> Result<SweepRow> {
    let mut row = SweepRow {
        algorithm: alg,
        hidden: h,
        layers: l,
        steps: t,
        flops_per_step: 0.0,
        peak_trace_values: 0,
        stored_activation_values: 0,
        wall_seconds: None,
        note: String::new(),
    };
    if matches!(alg, Algorithm::Rtrl | Algorithm::Eprop) && l != 1 {
        row.note = format!("skipped: {alg} is single-layer");
        return Ok(row);
    }
    let estimate = estimated_values(alg, cfg.trace_mode, h, l, t);
    if estimate > u128::from(cfg.value_cap) {
        row.note = format!("skipped: needs ~{estimate} values, cap {}", cfg.value_cap);
        return Ok(row);
    }
    let net = sweep_network(h, l)?;
    let params = init_params(&net, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let inputs: Vec<Vec<f64>> = (0..t).map(|_| vec![rng.gen_range(-1.0..1.0)]).collect();
    let targets = vec![vec![rng.gen_range(-1.0..1.0)]];
    let mut ops = OpCounter::new();
    let start = Instant::now();
    episode_gradient(alg, cfg.trace_mode, &net, &params, &inputs, &targets, &mut ops)?;
    if timed {
        row.wall_seconds = Some(start.elapsed().as_secs_f64());
    }
    row.flops_per_step = ops.flops as f64 / t as f64;
    row.peak_trace_values = ops.peak_trace_values;
    row.stored_activation_values = ops.stored_activation_values;
    Ok(row)
}

/// Runs every (algorithm, H, L, T) combination in that nesting order.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    let dims = [("H", &cfg.hidden), ("L", &cfg.layers), ("T", &cfg.steps)];
    for (name, values) in dims {
        if values.is_empty() || values.contains(&0) {
            return Err(Error::Argument(format!(
                "{name} values must be non-empty and ≥ 1"
            )));
        }
    }
    if cfg.algorithms.is_empty() {
        return Err(Error::Argument("no algorithms to sweep".into()));
    }
    let mut points = Vec::new();
    for &a in &cfg.algorithms {
        for &h in &cfg.hidden {
            for &l in &cfg.layers {
                for &t in &cfg.steps {
                    points.push((a, h, l, t));
                }
            }
        }
    }
    let rows = if cfg.parallel {
        worker_pool()?.install(|| {
            points
                .par_iter()
                .map(|&(a, h, l, t)| run_point(cfg, a, h, l, t, false))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        points
            .iter()
            .map(|&(a, h, l, t)| run_point(cfg, a, h, l, t, true))
            .collect::<Result<Vec<_>>>()?
    };
    Ok(SweepResult { rows })
}

pub const SWEEP_HEADER: &str =
    "algorithm,H,L,T,flops_per_step,peak_trace_values,stored_activation_values,wall_seconds,note";

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{SWEEP_HEADER}\n");
        for r in &self.rows {
            let wall = r.wall_seconds.map(|w| format!("{w:.6}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.algorithm,
                r.hidden,
                r.layers,
                r.steps,
                r.flops_per_step,
                r.peak_trace_values,
                r.stored_activation_values,
                wall,
                r.note.replace(',', ";")
            ));
        }
        out
    }
}

/// Least-squares slope of `ln y` against `ln x`. `None` for fewer than two
/// points, non-positive values, or a degenerate `x` spread.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 || xs.iter().chain(ys).any(|v| v.is_nan() || *v <= 0.0) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Metric {
    FlopsPerStep,
    PeakTraceValues,
    StoredActivationValues,
}

impl Metric {
    pub const ALL: [Metric; 3] = [
        Metric::FlopsPerStep,
        Metric::PeakTraceValues,
        Metric::StoredActivationValues,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::FlopsPerStep => "flops_per_step",
            Metric::PeakTraceValues => "peak_trace_values",
            Metric::StoredActivationValues => "stored_activation_values",
        }
    }

    fn of(self, r: &SweepRow) -> f64 {
        match self {
            Metric::FlopsPerStep => r.flops_per_step,
            Metric::PeakTraceValues => r.peak_trace_values as f64,
            Metric::StoredActivationValues => r.stored_activation_values as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Dim {
    H,
    L,
    T,
}

impl Dim {
    pub fn as_str(self) -> &'static str {
        match self {
            Dim::H => "H",
            Dim::L => "L",
            Dim::T => "T",
        }
    }

    fn of(self, r: &SweepRow) -> usize {
        match self {
            Dim::H => r.hidden,
            Dim::L => r.layers,
            Dim::T => r.steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeFit {
    pub algorithm: Algorithm,
    pub metric: Metric,
    pub varied: Dim,
    /// The two dims held fixed, e.g. `L=1 T=8`.
    pub fixed: String,
    pub points: usize,
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingReport {
    pub sweep: SweepResult,
    pub fits: Vec<SlopeFit>,
    pub notices: Vec<String>,
}

/// Minimum distinct values of the varied dim for a fit.
pub const MIN_FIT_POINTS: usize = 3;

pub fn emit_scaling_report(sweep: &SweepResult) -> ScalingReport {
    let mut fits = Vec::new();
    let mut notices = Vec::new();
    let done: Vec<&SweepRow> = sweep.rows.iter().filter(|r| !r.skipped()).collect();
    for varied in [Dim::H, Dim::L, Dim::T] {
        let fixed_dims: Vec<Dim> = [Dim::H, Dim::L, Dim::T]
            .into_iter()
            .filter(|d| *d != varied)
            .collect();
        let mut series: BTreeMap<(Algorithm, usize, usize), Vec<&SweepRow>> = BTreeMap::new();
        for r in &done {
            let key = (r.algorithm, fixed_dims[0].of(r), fixed_dims[1].of(r));
            series.entry(key).or_default().push(r);
        }
        for ((alg, f0, f1), rows) in series {
            let mut by_dim: BTreeMap<usize, &SweepRow> = BTreeMap::new();
            for r in rows {
                by_dim.entry(varied.of(r)).or_insert(r);
            }
            let fixed = format!("{}={f0} {}={f1}", fixed_dims[0].as_str(), fixed_dims[1].as_str());
            if by_dim.len() < 2 {
                continue;
            }
            if by_dim.len() < MIN_FIT_POINTS {
                notices.push(format!(
                    "{alg} vs {} ({fixed}): {} points, need {MIN_FIT_POINTS}; fit omitted",
                    varied.as_str(),
                    by_dim.len()
                ));
                continue;
            }
            let xs: Vec<f64> = by_dim.keys().map(|&d| d as f64).collect();
            for metric in Metric::ALL {
                let ys: Vec<f64> = by_dim.values().map(|r| metric.of(r)).collect();
                match log_log_slope(&xs, &ys) {
                    Some(slope) => fits.push(SlopeFit {
                        algorithm: alg,
                        metric,
                        varied,
                        fixed: fixed.clone(),
                        points: xs.len(),
                        slope,
                    }),
                    None => notices.push(format!(
                        "{alg} {} vs {} ({fixed}): non-positive values; fit omitted",
                        metric.as_str(),
                        varied.as_str()
                    )),
                }
            }
        }
    }
    ScalingReport {
        sweep: sweep.clone(),
        fits,
        notices,
    }
}

impl ScalingReport {
    pub fn fits_csv(&self) -> String {
        let mut out = String::from("algorithm,metric,varied,fixed,points,slope\n");
        for f in &self.fits {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                f.algorithm,
                f.metric.as_str(),
                f.varied.as_str(),
                f.fixed,
                f.points,
                f.slope
            ));
        }
        out
    }

    pub fn find(&self, algorithm: Algorithm, metric: Metric, varied: Dim) -> Option<&SlopeFit> {
        self.fits
            .iter()
            .find(|f| f.algorithm == algorithm && f.metric == metric && f.varied == varied)
    }
}
