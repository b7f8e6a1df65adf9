//! Synthetic tasks, plain-SGD training loop and gradient-alignment metrics.

mod tasks;

pub use tasks::{generate_task, temporal_xor, TaskInstance, TaskKind, TaskParams, TaskStream};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::{ForwardLearner, Propagation};
use crate::eprop::{deep_eprop_episode, eprop_episode, TraceMode};
use crate::error::{Error, Result};
use crate::linalg::OpCounter;
use crate::network::{Network, ParamGroupId, Params};
use crate::oracles::{bptt_gradient, relative_l2, GradientSet};
use crate::rtrl::{deep_rtrl_episode, rtrl_episode};

/// Denominator floor for relative errors against near-zero references.
pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Bptt,
    Rtrl,
    DeepRtrl,
    Eprop,
    DeepEprop,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Bptt,
        Algorithm::Rtrl,
        Algorithm::DeepRtrl,
        Algorithm::Eprop,
        Algorithm::DeepEprop,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Bptt => "bptt",
            Algorithm::Rtrl => "rtrl",
            Algorithm::DeepRtrl => "deep_rtrl",
            Algorithm::Eprop => "eprop",
            Algorithm::DeepEprop => "deep_eprop",
        }
    }

    /// Forward-mode propagation used by this algorithm, if it has one.
    pub fn propagation(self, mode: TraceMode) -> Option<Propagation> {
        match self {
            Algorithm::Bptt => None,
            Algorithm::Rtrl | Algorithm::DeepRtrl => Some(Propagation::Exact),
            Algorithm::Eprop => Some(Propagation::Eprop(TraceMode::DiagHomeDenseAbove)),
            Algorithm::DeepEprop => Some(Propagation::Eprop(mode)),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown algorithm `{s}`")))
    }
}

/// Full-episode gradient of the tracked groups with parameters held fixed.
pub fn episode_gradient(
    algorithm: Algorithm,
    mode: TraceMode,
    net: &Network,
    params: &Params,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    ops: &mut OpCounter,
) -> Result<GradientSet> {
    match algorithm {
        Algorithm::Bptt => bptt_gradient(net, params, inputs, targets, ops),
        Algorithm::Rtrl => rtrl_episode(net, params, inputs, targets, ops),
        Algorithm::DeepRtrl => deep_rtrl_episode(net, params, inputs, targets, ops),
        Algorithm::Eprop => eprop_episode(net, params, inputs, targets, ops),
        Algorithm::DeepEprop => deep_eprop_episode(net, params, inputs, targets, mode, ops),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupAlignment {
    pub group: ParamGroupId,
    pub cosine: f64,
    pub relative_l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientReport {
    pub cosine: f64,
    pub relative_l2: f64,
    pub per_group: Vec<GroupAlignment>,
}

/// Cosine similarity; 1 when both vectors are zero, 0 when exactly one is.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    match (na == 0.0, nb == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => (dot / (na * nb)).clamp(-1.0, 1.0),
    }
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / nb.max(NORM_FLOOR)
}

/// Compares `g1` against the reference `g2`.
pub fn gradient_alignment(g1: &GradientSet, g2: &GradientSet) -> Result<GradientReport> {
    let relative = relative_l2(g1, g2)?;
    let per_group = g1
        .iter()
        .zip(g2.iter())
        .map(|((id, a), (_, b))| GroupAlignment {
            group: id.clone(),
            cosine: cosine(a.as_slice(), b.as_slice()),
            relative_l2: rel(a.as_slice(), b.as_slice()),
        })
        .collect();
    Ok(GradientReport {
        cosine: cosine(&g1.flatten(), &g2.flatten()),
        relative_l2: relative,
        per_group,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateTiming {
    EpisodeEnd,
    /// Apply each step's gradient immediately; traces then mix parameter values.
    Online,
}

impl FromStr for UpdateTiming {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "episode_end" => Ok(UpdateTiming::EpisodeEnd),
            "online" => Ok(UpdateTiming::Online),
            _ => Err(Error::Argument(format!("unknown update timing `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub trace_mode: TraceMode,
    pub learning_rate: f64,
    pub episodes: usize,
    pub seed: u64,
    pub update_timing: UpdateTiming,
    /// Also compute cosine and relative error against BPTT each episode.
    pub align_with_bptt: bool,
}

impl TrainConfig {
    pub fn new(algorithm: Algorithm, learning_rate: f64, episodes: usize) -> Self {
        TrainConfig {
            algorithm,
            trace_mode: TraceMode::default(),
            learning_rate,
            episodes,
            seed: 0,
            update_timing: UpdateTiming::EpisodeEnd,
            align_with_bptt: false,
        }
    }

    /// A zero rate is accepted and leaves parameters untouched.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Argument(format!(
                "learning_rate must be finite and ≥ 0, got {}",
                self.learning_rate
            )));
        }
        if self.episodes == 0 {
            return Err(Error::Argument("episodes must be ≥ 1".into()));
        }
        if self.update_timing == UpdateTiming::Online && self.algorithm == Algorithm::Bptt {
            return Err(Error::Argument("bptt cannot update online".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsRow {
    /// 1-based.
    pub episode: usize,
    pub loss: f64,
    pub cosine_vs_bptt: Option<f64>,
    pub rel_l2_vs_bptt: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metrics: Vec<MetricsRow>,
    pub params: Params,
}

/// θ ← θ − lr·g over the groups present in `grad`.
pub fn sgd_step(params: &mut Params, grad: &GradientSet, lr: f64) -> Result<()> {
    for (id, g) in grad.iter() {
        let p = params
            .get_mut(id)
            .ok_or_else(|| Error::Internal(format!("gradient for unknown group {id}")))?;
        if p.shape() != g.shape() {
            return Err(Error::shape("sgd", p.shape_str(), g.shape_str()));
        }
        for (w, d) in p.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *w -= lr * d;
        }
    }
    Ok(())
}

/// Trains the tracked groups of `net` starting from `params`. `tasks` yields
/// the episode with the given 0-based index.
pub fn train(
    net: &Network,
    mut params: Params,
    config: &TrainConfig,
    mut tasks: impl FnMut(usize) -> Result<TaskInstance>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut metrics = Vec::with_capacity(config.episodes);
    let mut ops = OpCounter::new();
    for episode in 0..config.episodes {
        let task = tasks(episode)?;
        let (xs, ys) = (&task.inputs, &task.targets);
        let fixed_grad = if config.align_with_bptt || config.update_timing == UpdateTiming::EpisodeEnd {
            Some(episode_gradient(
                config.algorithm,
                config.trace_mode,
                net,
                &params,
                xs,
                ys,
                &mut ops,
            )?)
        } else {
            None
        };
        let (cos, rl2) = if config.align_with_bptt {
            let reference = bptt_gradient(net, &params, xs, ys, &mut ops)?;
            let report = gradient_alignment(fixed_grad.as_ref().unwrap(), &reference)?;
            (Some(report.cosine), Some(report.relative_l2))
        } else {
            (None, None)
        };
        let loss = match config.update_timing {
            UpdateTiming::EpisodeEnd => {
                let loss = net.loss(&params, xs, ys)?;
                check_loss(loss, episode)?;
                sgd_step(&mut params, fixed_grad.as_ref().unwrap(), config.learning_rate)?;
                loss
            }
            UpdateTiming::Online => {
                let propagation = config
                    .algorithm
                    .propagation(config.trace_mode)
                    .expect("validated: forward-mode algorithm");
                online_episode(
                    net,
                    &mut params,
                    propagation,
                    xs,
                    ys,
                    config.learning_rate,
                    episode,
                )?
            }
        };
        metrics.push(MetricsRow {
            episode: episode + 1,
            loss,
            cosine_vs_bptt: cos,
            rel_l2_vs_bptt: rl2,
        });
    }
    Ok(TrainOutcome { metrics, params })
}

fn check_loss(loss: f64, episode: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            episode: episode + 1,
            detail: format!("loss is {loss}"),
        })
    }
}

fn online_episode(
    net: &Network,
    params: &mut Params,
    propagation: Propagation,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    lr: f64,
    episode: usize,
) -> Result<f64> {
    net.check_episode(inputs, targets)?;
    let mut learner = ForwardLearner::new(net, propagation)?;
    let horizon = inputs.len();
    let mut total = 0.0;
    for (t, x) in inputs.iter().enumerate() {
        let target = net.target_at(targets, t, horizon);
        if let Some(l) = learner.step(params, x, target)?.loss {
            total += l;
            check_loss(total, episode)?;
            let g = learner.take_gradient();
            sgd_step(params, &g, lr)?;
        }
    }
    Ok(total)
}

/// CSV with header `episode,loss,cosine_vs_bptt,rel_l2_vs_bptt`.
pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = String::from("episode,loss,cosine_vs_bptt,rel_l2_vs_bptt\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.episode,
            r.loss,
            opt(r.cosine_vs_bptt),
            opt(r.rel_l2_vs_bptt)
        ));
    }
    out
}

/// Trailing mean of the loss over the last `window` episodes, per episode.
pub fn trailing_mean_loss(rows: &[MetricsRow], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..rows.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            rows[lo..=i].iter().map(|r| r.loss).sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

/// First 1-based episode at which a full window's trailing mean drops below
/// `threshold`.
pub fn episodes_to_threshold(rows: &[MetricsRow], window: usize, threshold: f64) -> Option<usize> {
    trailing_mean_loss(rows, window)
        .iter()
        .enumerate()
        .find(|(i, m)| i + 1 >= window && **m < threshold)
        .map(|(i, _)| i + 1)
}
