//! Command-line interface. Exit codes: 0 success, 1 usage error, 2 runtime
//! error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::algos::{AlgoConfig, AlgoKind, Batch, FrozenLoss};
use crate::chart::loss_chart_svg;
use crate::dataset::{sample_minibatch, DatasetStats, TransitionDataset};
use crate::error::Error;
use crate::eval::{build_report, upper_bound};
use crate::nn::{finite_diff_report, Activation, NetworkSpec, QModel};
use crate::rng::{self, Stream};
use crate::sim::{SimConfig, SimModel};
use crate::train::{self, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Largest relative gradient error tolerated by `gradcheck`.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "emorl", version, about = "Offline RL benchmark for an emotion-aware game-playing robot")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a behavior dataset and write it with its statistics.
    GenData(GenDataArgs),
    /// Summarize a dataset and export visit counts and the reward trend.
    Stats(StatsArgs),
    /// Train one algorithm with one configuration.
    Train(TrainArgs),
    /// Run the hyperparameter grid for one or more algorithms.
    Grid(GridArgs),
    /// Filter runs by the overestimation bound and compare algorithms.
    Report(ReportArgs),
    /// Solve the simulator exactly and write the optimal Q matrix.
    Oracle(OracleArgs),
    /// Compare analytic and numerical gradients of every loss.
    Gradcheck(GradcheckArgs),
    /// Draw the loss curve of a run as SVG.
    Chart(ChartArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Simulator configuration JSON; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Dataset file; statistics are written next to it.
    #[arg(long, default_value = "data.jsonl")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for the CSV exports; defaults to the dataset's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Width of the centered moving average over per-step mean rewards.
    #[arg(long, default_value_t = 5)]
    pub window: usize,
}

/// Per-run overrides; anything omitted comes from `--config` or the
/// built-in defaults shown.
#[derive(Debug, Args, Default)]
pub struct RunOverrides {
    /// Learning rate [default: 0.01]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Minibatch size [default: 16]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Hidden layers [default: 3]
    #[arg(long)]
    pub hidden_layers: Option<usize>,
    /// Units per hidden layer [default: 32]
    #[arg(long)]
    pub hidden_units: Option<usize>,
    /// relu or tanh [default: relu]
    #[arg(long)]
    pub activation: Option<Activation>,
    /// Dropout rate [default: 0.1]
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Discount factor [default: 0.99]
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Gradient steps [default: 10000]
    #[arg(long)]
    pub total_steps: Option<usize>,
    /// Steps per logged epoch [default: 100]
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
    /// Steps between target-network syncs [default: 2500]
    #[arg(long)]
    pub target_update_interval: Option<usize>,
    /// Random seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

impl RunOverrides {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.hidden_layers {
            cfg.hidden_layers = v;
        }
        if let Some(v) = self.hidden_units {
            cfg.hidden_units = v;
        }
        if let Some(v) = self.activation {
            cfg.activation = v;
        }
        if let Some(v) = self.dropout {
            cfg.dropout = v;
        }
        if let Some(v) = self.gamma {
            cfg.algo.gamma = v;
        }
        if let Some(v) = self.total_steps {
            cfg.total_steps = v;
        }
        if let Some(v) = self.steps_per_epoch {
            cfg.steps_per_epoch = v;
        }
        if let Some(v) = self.target_update_interval {
            cfg.target_update_interval = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// nfq, dqn, ddqn, bcq or cql
    #[arg(long)]
    pub algo: AlgoKind,
    #[arg(long)]
    pub data: PathBuf,
    /// Run configuration JSON; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: RunOverrides,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Comma-separated algorithms
    #[arg(long, value_delimiter = ',', default_value = "nfq,dqn,ddqn,bcq,cql")]
    pub algos: Vec<AlgoKind>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "grid")]
    pub out: PathBuf,
    /// Concurrent runs [default: available cores]
    #[arg(long)]
    pub parallel: Option<usize>,
    /// Root seed; every run derives its own seed from it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Gradient steps per run; lower it for a quick sweep.
    #[arg(long, default_value_t = 10_000)]
    pub total_steps: usize,
    #[arg(long, default_value_t = 100)]
    pub steps_per_epoch: usize,
    #[arg(long, default_value_t = 2_500)]
    pub target_update_interval: usize,
    #[arg(long, default_value_t = 0.99)]
    pub gamma: f64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Grid output directory containing manifest.csv.
    #[arg(long)]
    pub runs: PathBuf,
    /// Desired episode length for the overestimation bound.
    #[arg(long, default_value_t = 60)]
    pub episode_len: usize,
    #[arg(long, default_value_t = 0.99)]
    pub gamma: f64,
    /// Largest per-step reward.
    #[arg(long, default_value_t = 1.0)]
    pub rmax: f64,
    /// Directory for report.csv and report.md; defaults to --runs.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0.99)]
    pub gamma: f64,
    /// Value iteration stops when the largest update falls below this.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value = "qstar.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Network spec JSON [default: 2 layers, 16 units, relu, batch norm]
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Losses to check [default: all]
    #[arg(long, value_delimiter = ',')]
    pub algo: Vec<AlgoKind>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scales the analytic gradient by (1 + x); a sensitivity test hook.
    #[arg(long, hide = true, default_value_t = 0.0)]
    pub corrupt_grad: f64,
}

#[derive(Debug, Args)]
pub struct ChartArgs {
    /// epochs.csv written by train or grid.
    #[arg(long)]
    pub epochs: PathBuf,
    #[arg(long, default_value = "loss.svg")]
    pub out: PathBuf,
    #[arg(long, default_value = "Average loss per epoch")]
    pub title: String,
}

enum Failure {
    Usage(String),
    Runtime(Error),
    /// A check that ran to completion but did not pass.
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Parses `args` (program name first) and runs the command; returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let outcome = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Stats(a) => stats(a),
        Command::Train(a) => train_cmd(a),
        Command::Grid(a) => grid(a),
        Command::Report(a) => report(a),
        Command::Oracle(a) => oracle(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Chart(a) => chart(a),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
        Err(Failure::Check(msg)) => {
            eprintln!("{msg}");
            EXIT_RUNTIME
        }
    }
}

/// Input files named on the command line must exist; a missing one is a
/// usage error rather than a runtime failure.
fn require_file(path: &Path, flag: &str) -> CmdResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{flag}: no such file: {}", path.display())))
    }
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn load_sim_config(path: Option<&Path>) -> std::result::Result<SimConfig, Failure> {
    match path {
        Some(p) => {
            require_file(p, "--config")?;
            Ok(SimConfig::from_json_file(p)?)
        }
        None => Ok(SimConfig::default()),
    }
}

fn load_dataset(path: &Path) -> std::result::Result<TransitionDataset, Failure> {
    require_file(path, "--data")?;
    TransitionDataset::load(path).map_err(|e| Failure::Runtime(with_path(path, e)))
}

fn with_path(path: &Path, e: Error) -> Error {
    match e {
        Error::Parse { .. } => Error::InvalidDataset(format!("{}: {e}", path.display())),
        other => other,
    }
}

fn print_dataset_summary(stats: &DatasetStats) {
    println!("episodes: {}", stats.episodes);
    println!("steps: {}", stats.steps);
    println!(
        "episode length: mean {:.1}, sd {:.1}",
        stats.episode_length_mean, stats.episode_length_sd
    );
    println!("exploration rate: {:.1}%", stats.exploration_rate * 100.0);
}

fn gen_data(a: GenDataArgs) -> CmdResult {
    let cfg = load_sim_config(a.config.as_deref())?;
    let sim = SimModel::new(cfg)?;
    let data = sim.generate_dataset(a.seed);
    let dir = parent_dir(&a.out);
    std::fs::create_dir_all(&dir).map_err(|e| Error::file(&dir, e))?;
    data.save(&a.out)?;
    let stats = DatasetStats::compute(&data, 5);
    stats.write_sidecars(&dir)?;
    println!("wrote {}", a.out.display());
    print_dataset_summary(&stats);
    Ok(())
}

fn stats(a: StatsArgs) -> CmdResult {
    if a.window == 0 {
        return Err(Failure::Usage("--window must be at least 1".into()));
    }
    let data = load_dataset(&a.data)?;
    let stats = DatasetStats::compute(&data, a.window);
    let out = a.out.unwrap_or_else(|| parent_dir(&a.data));
    stats.write_sidecars(&out)?;
    print_dataset_summary(&stats);
    println!("exports written to {}", out.display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> CmdResult {
    let mut cfg = match &a.config {
        Some(p) => {
            require_file(p, "--config")?;
            RunConfig::from_json_file(p)?
        }
        None => RunConfig::default(),
    };
    cfg.algo.kind = a.algo;
    a.overrides.apply(&mut cfg);
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let data = load_dataset(&a.data)?;
    let outcome = train::train(&cfg, &data)?;
    train::write_run(&a.out, &outcome)?;
    let svg = loss_chart_svg(&outcome.result.epochs, &format!("{} loss", cfg.algo.kind.label()));
    let svg_path = a.out.join("loss.svg");
    std::fs::write(&svg_path, svg).map_err(|e| Error::file(&svg_path, e))?;

    let r = &outcome.result;
    println!("algo: {}", cfg.algo.kind);
    println!("epochs: {}", r.epochs.len());
    match (r.selected_epoch, r.selected_value) {
        (Some(e), Some(v)) => println!("selected epoch {e}: V(s0) = {v:.4}"),
        _ => println!("diverged: no epoch with a finite loss"),
    }
    println!("wall time: {:.1}s", r.wall_time.as_secs_f64());
    println!("outputs in {}", a.out.display());
    Ok(())
}

fn grid(a: GridArgs) -> CmdResult {
    if a.algos.is_empty() {
        return Err(Failure::Usage("--algos must name at least one algorithm".into()));
    }
    let mut base = RunConfig {
        total_steps: a.total_steps,
        steps_per_epoch: a.steps_per_epoch,
        target_update_interval: a.target_update_interval,
        ..RunConfig::default()
    };
    base.algo.gamma = a.gamma;
    base.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let data = load_dataset(&a.data)?;
    let parallel = a
        .parallel
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    std::fs::create_dir_all(&a.out).map_err(|e| Error::file(&a.out, e))?;
    let out = &a.out;
    let results = train::grid_search_with(&a.algos, &data, &base, a.seed, parallel, |i, o| {
        train::write_run(out.join(train::run_dir_name(&o.result, i % train::GRID_SIZE)), o)
    })?;
    train::write_manifest(out.join("manifest.csv"), &results)?;
    let diverged = results.iter().filter(|r| r.diverged).count();
    println!("runs: {} ({} diverged)", results.len(), diverged);
    println!("manifest: {}", out.join("manifest.csv").display());
    Ok(())
}

fn report(a: ReportArgs) -> CmdResult {
    if a.episode_len == 0 || !(0.0..=1.0).contains(&a.gamma) {
        return Err(Failure::Usage("need --episode-len >= 1 and 0 <= --gamma <= 1".into()));
    }
    require_file(&a.runs.join("manifest.csv"), "--runs")?;
    let results = train::load_runs(&a.runs)?;
    let bound = upper_bound(a.episode_len, a.gamma, a.rmax);
    let report = build_report(&results, bound);
    let out = a.out.unwrap_or_else(|| a.runs.clone());
    std::fs::create_dir_all(&out).map_err(|e| Error::file(&out, e))?;
    report.write_csv(out.join("report.csv"))?;
    report.write_markdown(out.join("report.md"))?;
    print!("{}", report.to_markdown());
    Ok(())
}

fn oracle(a: OracleArgs) -> CmdResult {
    if !(0.0..1.0).contains(&a.gamma) || !(a.tol > 0.0) {
        return Err(Failure::Usage("need 0 <= --gamma < 1 and --tol > 0".into()));
    }
    let cfg = load_sim_config(a.config.as_deref())?;
    let sim = SimModel::new(cfg)?;
    let q = sim.exact_q_oracle(a.gamma, a.tol)?;
    q.write_csv(&a.out)?;
    let s0 = sim.config().start_state;
    println!("V*({}) = {:.6}", s0.label(), q.value(s0));
    println!("greedy action at start: {}", q.greedy_action(s0).label());
    println!("wrote {}", a.out.display());
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> CmdResult {
    let base_spec = match &a.spec {
        Some(p) => {
            require_file(p, "--spec")?;
            let text = std::fs::read_to_string(p).map_err(|e| Error::file(p, e))?;
            serde_json::from_str::<NetworkSpec>(&text).map_err(Error::from)?
        }
        None => NetworkSpec::default(),
    };
    let algos = if a.algo.is_empty() { AlgoKind::ALL.to_vec() } else { a.algo.clone() };
    let data = SimModel::new(SimConfig::default())?.generate_dataset(a.seed);
    let enc = crate::mdp::ObservationEncoding::FactoredOnehot;
    if base_spec.input_dim != enc.dim() {
        return Err(Failure::Usage(format!(
            "--spec input_dim must be {} for the factored encoding",
            enc.dim()
        )));
    }
    let mut worst = 0.0f64;
    for kind in algos {
        let cfg = AlgoConfig::new(kind);
        let spec = NetworkSpec {
            gen_head: cfg.needs_gen_head(),
            ..base_spec.clone()
        };
        let mut init = rng::stream(a.seed, Stream::Init);
        let model = QModel::init(spec, &mut init)?;
        let mut batch_rng = rng::stream(a.seed, Stream::Batch);
        let trs = sample_minibatch(data.transitions(), 16, &mut batch_rng)?;
        let mut obj = FrozenLoss::new(&model, Batch::from_transitions(&trs, enc), cfg)?;
        obj.grad_scale = 1.0 + a.corrupt_grad;
        let report = finite_diff_report(&model, &obj, 1e-4);
        let err = report.max_rel_error;
        let verdict = if err < GRADCHECK_TOLERANCE { "ok" } else { "FAIL" };
        println!(
            "{kind:<5} max relative error {err:.3e} over {} parameters ({} skipped at kinks) {verdict}",
            report.compared, report.skipped_kinks
        );
        worst = worst.max(err);
    }
    if worst < GRADCHECK_TOLERANCE {
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "gradient check failed: {worst:.3e} exceeds {GRADCHECK_TOLERANCE:e}"
        )))
    }
}

fn chart(a: ChartArgs) -> CmdResult {
    require_file(&a.epochs, "--epochs")?;
    let epochs = train::read_epochs_csv(&a.epochs)?;
    std::fs::write(&a.out, loss_chart_svg(&epochs, &a.title)).map_err(|e| Error::file(&a.out, e))?;
    println!("wrote {}", a.out.display());
    Ok(())
}
