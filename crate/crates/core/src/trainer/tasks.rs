use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// One-hot symbol stream; target at the last step is the symbol seen
    /// `delay` steps earlier.
    DelayedCopy,
    /// Two steps are flagged; target at the last step is the XOR of their bits.
    TemporalXor,
    /// Scalar stream; target at every step is the running mean.
    PatternSum,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::DelayedCopy => "delayed_copy",
            TaskKind::TemporalXor => "temporal_xor",
            TaskKind::PatternSum => "pattern_sum",
        }
    }

    pub fn input_dim(self, params: &TaskParams) -> usize {
        match self {
            TaskKind::DelayedCopy => params.n_symbols,
            TaskKind::TemporalXor => 2,
            TaskKind::PatternSum => 1,
        }
    }

    pub fn readout_dim(self, params: &TaskParams) -> usize {
        match self {
            TaskKind::DelayedCopy => params.n_symbols,
            TaskKind::TemporalXor | TaskKind::PatternSum => 1,
        }
    }

    /// Whether targets are given at every step.
    pub fn every_step(self) -> bool {
        self == TaskKind::PatternSum
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "delayed_copy" => Ok(TaskKind::DelayedCopy),
            "temporal_xor" => Ok(TaskKind::TemporalXor),
            "pattern_sum" => Ok(TaskKind::PatternSum),
            _ => Err(Error::Argument(format!("unknown task `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskParams {
    pub seq_len: usize,
    pub delay: usize,
    pub n_symbols: usize,
    /// temporal_xor: both flags fall within the last `flag_window` steps.
    pub flag_window: usize,
}

impl Default for TaskParams {
    fn default() -> Self {
        TaskParams {
            seq_len: 10,
            delay: 3,
            n_symbols: 3,
            flag_window: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskInstance {
    pub kind: TaskKind,
    pub inputs: Vec<Vec<f64>>,
    /// One entry for final-step tasks, one per step otherwise.
    pub targets: Vec<Vec<f64>>,
    pub seed: u64,
}

fn validate(kind: TaskKind, p: &TaskParams) -> Result<()> {
    if p.seq_len == 0 {
        return Err(Error::Argument("seq_len must be ≥ 1".into()));
    }
    match kind {
        TaskKind::DelayedCopy => {
            if p.n_symbols < 2 {
                return Err(Error::Argument("delayed_copy needs n_symbols ≥ 2".into()));
            }
            if p.seq_len < p.delay + 1 {
                return Err(Error::Argument(format!(
                    "delayed_copy needs seq_len ≥ delay + 1 (seq_len {}, delay {})",
                    p.seq_len, p.delay
                )));
            }
        }
        TaskKind::TemporalXor => {
            if p.flag_window < 2 || p.flag_window > p.seq_len {
                return Err(Error::Argument(format!(
                    "temporal_xor needs 2 ≤ flag_window ≤ seq_len (flag_window {}, seq_len {})",
                    p.flag_window, p.seq_len
                )));
            }
        }
        TaskKind::PatternSum => {}
    }
    Ok(())
}

pub fn generate_task(kind: TaskKind, params: &TaskParams, seed: u64) -> Result<TaskInstance> {
    validate(kind, params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t_len = params.seq_len;
    let (inputs, targets) = match kind {
        TaskKind::DelayedCopy => {
            let k = params.n_symbols;
            let symbols: Vec<usize> = (0..t_len).map(|_| rng.gen_range(0..k)).collect();
            let one_hot = |s: usize| (0..k).map(|i| if i == s { 1.0 } else { 0.0 }).collect();
            let inputs = symbols.iter().map(|&s| one_hot(s)).collect();
            (inputs, vec![one_hot(symbols[t_len - 1 - params.delay])])
        }
        TaskKind::TemporalXor => {
            let first = rng.gen_range(t_len - params.flag_window..t_len - 1);
            let second = rng.gen_range(first + 1..t_len);
            let bits: Vec<bool> = (0..t_len).map(|_| rng.gen_bool(0.5)).collect();
            return Ok(TaskInstance {
                seed,
                ..temporal_xor(t_len, [first, second], &bits)?
            });
        }
        TaskKind::PatternSum => {
            let xs: Vec<f64> = (0..t_len).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut sum = 0.0;
            let targets = xs
                .iter()
                .enumerate()
                .map(|(t, x)| {
                    sum += x;
                    vec![sum / (t + 1) as f64]
                })
                .collect();
            (xs.iter().map(|x| vec![*x]).collect(), targets)
        }
    };
    Ok(TaskInstance {
        kind,
        inputs,
        targets,
        seed,
    })
}

/// Builds a temporal-XOR episode from explicit flag positions (0-based) and bits.
/// Flagged steps carry `[±1, 1]` for bit 1/0 and all other steps `[0, 0]`; the
/// target is `[1]` when the two flagged bits differ and `[0]` otherwise.
pub fn temporal_xor(seq_len: usize, flagged: [usize; 2], bits: &[bool]) -> Result<TaskInstance> {
    if bits.len() != seq_len || flagged.iter().any(|&f| f >= seq_len) || flagged[0] == flagged[1] {
        return Err(Error::Argument("invalid temporal_xor layout".into()));
    }
    let inputs = (0..seq_len)
        .map(|t| {
            if flagged.contains(&t) {
                vec![if bits[t] { 1.0 } else { -1.0 }, 1.0]
            } else {
                vec![0.0, 0.0]
            }
        })
        .collect();
    let xor = bits[flagged[0]] != bits[flagged[1]];
    Ok(TaskInstance {
        kind: TaskKind::TemporalXor,
        inputs,
        targets: vec![vec![if xor { 1.0 } else { 0.0 }]],
        seed: 0,
    })
}

/// Deterministic per-episode task source.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskStream {
    pub kind: TaskKind,
    pub params: TaskParams,
    pub seed: u64,
    /// Cycle through this many fixed instances; 0 draws a fresh one per episode.
    pub pool: usize,
}

impl TaskStream {
    pub fn new(kind: TaskKind, params: TaskParams, seed: u64) -> Self {
        TaskStream {
            kind,
            params,
            seed,
            pool: 0,
        }
    }

    pub fn instance(&self, episode: usize) -> Result<TaskInstance> {
        let index = if self.pool == 0 {
            episode
        } else {
            episode % self.pool
        };
        let mixed = self
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(index as u64);
        generate_task(self.kind, &self.params, mixed)
    }
}
