//! Command-line front end. Exit codes: 0 success, 1 check or run failure,
//! 2 usage or spec error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bench::{emit_scaling_report, run_sweep, SweepConfig, DEFAULT_VALUE_CAP};
use crate::engine::Fault;
use crate::eprop::TraceMode;
use crate::error::{Error, Result};
use crate::network::checkpoint::write_checkpoint;
use crate::network::{init_params, parse_spec, LossTimesteps, Network, ParamGroupId};
use crate::oracles::{enumerate_gradient_paths, DEFAULT_PATH_CAP};
use crate::trainer::{
    metrics_csv, train, Algorithm, TaskKind, TaskParams, TaskStream, TrainConfig, UpdateTiming,
};
use crate::verify::{run_verify, VerifyOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "deep-eprop",
    version,
    about = "Verify, train and benchmark online gradient engines for recurrent networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cross-check all gradient engines against the oracles.
    Verify(VerifyArgs),
    /// Train a network on a synthetic task.
    Train(TrainArgs),
    /// Operation-counted scaling sweep.
    Bench(BenchArgs),
    /// List every gradient path of a short episode.
    Paths(PathsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TraceModeArg {
    DiagHomeDenseAbove,
    DiagEverywhere,
}

impl From<TraceModeArg> for TraceMode {
    fn from(m: TraceModeArg) -> Self {
        match m {
            TraceModeArg::DiagHomeDenseAbove => TraceMode::DiagHomeDenseAbove,
            TraceModeArg::DiagEverywhere => TraceMode::DiagEverywhere,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlgorithmArg {
    Bptt,
    Rtrl,
    DeepRtrl,
    Eprop,
    DeepEprop,
}

impl From<AlgorithmArg> for Algorithm {
    fn from(a: AlgorithmArg) -> Self {
        match a {
            AlgorithmArg::Bptt => Algorithm::Bptt,
            AlgorithmArg::Rtrl => Algorithm::Rtrl,
            AlgorithmArg::DeepRtrl => Algorithm::DeepRtrl,
            AlgorithmArg::Eprop => Algorithm::Eprop,
            AlgorithmArg::DeepEprop => Algorithm::DeepEprop,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FaultArg {
    FlipCrossLayerSign,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    DelayedCopy,
    TemporalXor,
    PatternSum,
}

impl From<TaskArg> for TaskKind {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::DelayedCopy => TaskKind::DelayedCopy,
            TaskArg::TemporalXor => TaskKind::TemporalXor,
            TaskArg::PatternSum => TaskKind::PatternSum,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TimingArg {
    EpisodeEnd,
    Online,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Directory for all output files (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Network spec (JSON); adds checks on this network to the built-in battery.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
    /// Overrides the trace mode of the spec.
    #[arg(long, value_enum)]
    pub trace_mode: Option<TraceModeArg>,
    /// Replaces every error tolerance.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Episode length for the spec checks.
    #[arg(long, default_value_t = 5)]
    pub steps: usize,
    /// Run only the checks on --spec.
    #[arg(long, requires = "spec")]
    pub spec_only: bool,
    #[arg(long, value_enum, hide = true)]
    pub inject_fault: Option<FaultArg>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value = "deep-eprop")]
    pub algorithm: AlgorithmArg,
    /// Overrides the trace mode of the spec.
    #[arg(long, value_enum)]
    pub trace_mode: Option<TraceModeArg>,
    #[arg(long, value_enum, default_value = "temporal-xor")]
    pub task: TaskArg,
    #[arg(long, default_value_t = 1000)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0.05)]
    pub learning_rate: f64,
    #[arg(long, value_enum, default_value = "episode-end")]
    pub update_timing: TimingArg,
    #[arg(long, default_value_t = 10)]
    pub seq_len: usize,
    #[arg(long, default_value_t = 3)]
    pub delay: usize,
    #[arg(long, default_value_t = 3)]
    pub n_symbols: usize,
    #[arg(long, default_value_t = 6)]
    pub flag_window: usize,
    /// Cycle through this many fixed task instances (0: fresh every episode).
    #[arg(long, default_value_t = 0)]
    pub task_pool: usize,
    /// Also record cosine and relative error against BPTT every episode.
    #[arg(long)]
    pub align: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    /// Algorithms to sweep (repeatable); all when omitted.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub algorithm: Vec<AlgorithmArg>,
    #[arg(long, value_delimiter = ',', default_values_t = [4, 8, 16])]
    pub hidden: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [1])]
    pub layers: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [8])]
    pub steps: Vec<usize>,
    #[arg(long, value_enum, default_value = "diag-everywhere")]
    pub trace_mode: TraceModeArg,
    /// Run sweep points concurrently (wall time is then not recorded).
    #[arg(long)]
    pub parallel: bool,
    /// Skip points whose estimated storage exceeds this many values.
    #[arg(long, default_value_t = DEFAULT_VALUE_CAP)]
    pub value_cap: u64,
}

#[derive(Debug, Args)]
pub struct PathsArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 3)]
    pub steps: usize,
    /// Enumerate only this group (default: the spec's tracked groups).
    #[arg(long)]
    pub group: Option<String>,
    #[arg(long, default_value_t = DEFAULT_PATH_CAP)]
    pub cap: u128,
}

/// Outcome of a subcommand before it is mapped to an exit code.
enum Outcome {
    Ok,
    ChecksFailed(Vec<String>),
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(Outcome::Ok) => EXIT_OK,
        Ok(Outcome::ChecksFailed(names)) => {
            eprintln!("verification failed: {}", names.join(", "));
            EXIT_FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Parse { .. } | Error::Validation(_) | Error::Argument(_) | Error::Shape { .. } => {
                    EXIT_USAGE
                }
                _ => EXIT_FAILURE,
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::Verify(a) => run_verify_cmd(a),
        Command::Train(a) => run_train(a),
        Command::Bench(a) => run_bench(a),
        Command::Paths(a) => run_paths(a),
    }
}

fn load_network(path: &Path, trace_mode: Option<TraceModeArg>) -> Result<(Network, u64)> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Argument(format!("cannot read spec {}: {e}", path.display())))?;
    let spec = parse_spec(&text)?;
    let mut net = Network::build(&spec)?;
    if let Some(m) = trace_mode {
        net = net.with_trace_mode(m.into())?;
    }
    Ok((net, spec.seed()))
}

fn write_out(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), contents)?;
    Ok(())
}

fn run_verify_cmd(a: VerifyArgs) -> Result<Outcome> {
    if let Some(t) = a.tolerance {
        if t.is_nan() || t < 0.0 {
            return Err(Error::Argument(format!("--tolerance must be ≥ 0, got {t}")));
        }
    }
    if a.steps == 0 {
        return Err(Error::Argument("--steps must be ≥ 1".into()));
    }
    let loaded = match &a.spec {
        Some(p) => {
            let (net, spec_seed) = load_network(p, a.trace_mode)?;
            let params = init_params(&net, spec_seed);
            Some((net, params))
        }
        None => None,
    };
    let opts = VerifyOptions {
        seed: a.common.seed,
        tolerance: a.tolerance,
        fault: a
            .inject_fault
            .map(|FaultArg::FlipCrossLayerSign| Fault::FlipCrossLayerSign),
        skip_battery: a.spec_only,
    };
    let report = run_verify(&opts, loaded.as_ref().map(|(n, p)| (n, p, a.steps)))?;
    write_out(&a.common.out, "report.json", &report.to_json())?;
    for c in &report.checks {
        eprintln!("{}", c.summary_line());
    }
    if report.passed {
        Ok(Outcome::Ok)
    } else {
        Ok(Outcome::ChecksFailed(
            report.failing().iter().map(|c| c.name.clone()).collect(),
        ))
    }
}

fn run_train(a: TrainArgs) -> Result<Outcome> {
    let (net, spec_seed) = load_network(&a.spec, a.trace_mode)?;
    let kind: TaskKind = a.task.into();
    let params = TaskParams {
        seq_len: a.seq_len,
        delay: a.delay,
        n_symbols: a.n_symbols,
        flag_window: a.flag_window,
    };
    let (want_in, want_out) = (kind.input_dim(&params), kind.readout_dim(&params));
    if net.input_dim != want_in || net.readout_dim != want_out {
        return Err(Error::Argument(format!(
            "task {kind} needs input_dim {want_in} and readout_dim {want_out}; spec has {} and {}",
            net.input_dim, net.readout_dim
        )));
    }
    let want_lt = if kind.every_step() {
        LossTimesteps::EveryStep
    } else {
        LossTimesteps::FinalOnly
    };
    if net.loss_timesteps != want_lt {
        return Err(Error::Argument(format!(
            "task {kind} needs loss_timesteps {}",
            if kind.every_step() {
                "every_step"
            } else {
                "final_only"
            }
        )));
    }
    let config = TrainConfig {
        algorithm: a.algorithm.into(),
        trace_mode: net.trace_mode,
        learning_rate: a.learning_rate,
        episodes: a.episodes,
        seed: a.common.seed,
        update_timing: match a.update_timing {
            TimingArg::EpisodeEnd => UpdateTiming::EpisodeEnd,
            TimingArg::Online => UpdateTiming::Online,
        },
        align_with_bptt: a.align,
    };
    config.validate()?;
    let stream = TaskStream {
        pool: a.task_pool,
        ..TaskStream::new(kind, params, a.common.seed)
    };
    stream.instance(0)?;
    let outcome = train(&net, init_params(&net, spec_seed), &config, |e| {
        stream.instance(e)
    })?;
    write_out(&a.common.out, "metrics.csv", &metrics_csv(&outcome.metrics))?;
    write_out(&a.common.out, "params.ckpt", &write_checkpoint(&outcome.params))?;
    if let Some(last) = outcome.metrics.last() {
        eprintln!("trained {} episodes; final loss {}", last.episode, last.loss);
    }
    Ok(Outcome::Ok)
}

fn run_bench(a: BenchArgs) -> Result<Outcome> {
    let algorithms: Vec<Algorithm> = if a.algorithm.is_empty() {
        Algorithm::ALL.to_vec()
    } else {
        a.algorithm.iter().map(|&x| x.into()).collect()
    };
    let cfg = SweepConfig {
        algorithms,
        hidden: a.hidden,
        layers: a.layers,
        steps: a.steps,
        seed: a.common.seed,
        trace_mode: a.trace_mode.into(),
        parallel: a.parallel,
        value_cap: a.value_cap,
    };
    let sweep = run_sweep(&cfg)?;
    let report = emit_scaling_report(&sweep);
    write_out(&a.common.out, "scaling.csv", &sweep.to_csv())?;
    write_out(&a.common.out, "slopes.csv", &report.fits_csv())?;
    for n in &report.notices {
        eprintln!("notice: {n}");
    }
    Ok(Outcome::Ok)
}

fn run_paths(a: PathsArgs) -> Result<Outcome> {
    let (mut net, spec_seed) = load_network(&a.spec, None)?;
    if a.steps == 0 {
        return Err(Error::Argument("--steps must be ≥ 1".into()));
    }
    if let Some(g) = &a.group {
        let id: ParamGroupId = g.parse()?;
        net = net.with_tracked(&[id])?;
    }
    let params = init_params(&net, spec_seed);
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(a.common.seed);
    let (inputs, targets) = crate::verify::random_episode(&net, &mut rng, a.steps);
    let e = match enumerate_gradient_paths(&net, &params, &inputs, &targets, a.cap) {
        Err(Error::ResourceLimit { what, count, cap }) => {
            return Err(Error::Argument(format!("{count} {what}s exceed --cap {cap}")))
        }
        other => other?,
    };
    let mut listing = format!("# {} paths over {} steps\n", e.paths.len(), a.steps);
    for p in &e.paths {
        listing.push_str(&format!("{p}\n"));
    }
    write_out(&a.common.out, "paths.txt", &listing)?;
    eprintln!("{} paths", e.paths.len());
    Ok(Outcome::Ok)
}
