//! Single training runs and the hyperparameter grid.
//!
//! A run performs `total_steps` gradient steps, logs the mean loss and the
//! initial-state value after every epoch, and selects the epoch with the
//! lowest loss. Non-finite losses are recorded, never fatal.

use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algos::{self, AlgoConfig, AlgoKind, Batch};
use crate::dataset::{sample_minibatch, TransitionDataset};
use crate::error::{Error, Result};
use crate::eval::initial_state_value;
use crate::floats;
use crate::mdp::ObservationEncoding;
use crate::nn::{Activation, ForwardMode, NetworkSpec, QModel};
use crate::rng::{self, derive_seed, Stream};

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub algo: AlgoConfig,
    pub lr: f64,
    pub batch_size: usize,
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub activation: Activation,
    pub dropout: f64,
    pub batch_norm: bool,
    pub total_steps: usize,
    pub steps_per_epoch: usize,
    pub target_update_interval: usize,
    pub seed: u64,
    pub encoding: ObservationEncoding,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            algo: AlgoConfig::default(),
            lr: 0.01,
            batch_size: 16,
            hidden_layers: 3,
            hidden_units: 32,
            activation: Activation::Relu,
            dropout: 0.1,
            batch_norm: true,
            total_steps: 10_000,
            steps_per_epoch: 100,
            target_update_interval: 2_500,
            seed: 0,
            encoding: ObservationEncoding::FactoredOnehot,
        }
    }
}

impl RunConfig {
    pub fn network_spec(&self) -> NetworkSpec {
        NetworkSpec {
            input_dim: self.encoding.dim(),
            hidden_layers: self.hidden_layers,
            hidden_units: self.hidden_units,
            activation: self.activation,
            dropout_rate: self.dropout,
            batch_norm: self.batch_norm,
            gen_head: self.algo.needs_gen_head(),
        }
    }

    pub fn epochs(&self) -> usize {
        self.total_steps / self.steps_per_epoch
    }

    pub fn validate(&self) -> Result<()> {
        self.algo.validate()?;
        self.network_spec().validate()?;
        if self.steps_per_epoch == 0 || self.total_steps == 0 {
            return Err(Error::InvalidConfig("step counts must be positive".into()));
        }
        if !self.total_steps.is_multiple_of(self.steps_per_epoch) {
            return Err(Error::InvalidConfig(format!(
                "total_steps {} is not a multiple of steps_per_epoch {}",
                self.total_steps, self.steps_per_epoch
            )));
        }
        if self.target_update_interval == 0 {
            return Err(Error::InvalidConfig("target_update_interval must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidConfig(format!("learning rate {} must be > 0", self.lr)));
        }
        Ok(())
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's steps.
    #[serde(with = "floats")]
    pub loss: f64,
    /// Initial-state value at the end of the epoch.
    #[serde(with = "floats")]
    pub v0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: RunConfig,
    pub epochs: Vec<EpochRecord>,
    /// Epoch with the lowest finite loss (1-based); `None` when diverged.
    pub selected_epoch: Option<usize>,
    #[serde(with = "floats::option")]
    pub selected_value: Option<f64>,
    pub diverged: bool,
    /// Steps after which the target network was synchronized.
    pub target_syncs: Vec<usize>,
    /// Not serialized so that run artifacts stay reproducible.
    #[serde(skip)]
    pub wall_time: Duration,
}

impl RunResult {
    fn select(config: RunConfig, epochs: Vec<EpochRecord>, target_syncs: Vec<usize>) -> Self {
        let mut best: Option<&EpochRecord> = None;
        for e in &epochs {
            if e.loss.is_finite() && best.is_none_or(|b| e.loss < b.loss) {
                best = Some(e);
            }
        }
        let selected_epoch = best.map(|e| e.epoch);
        let selected_value = best.map(|e| e.v0);
        RunResult {
            config,
            diverged: best.is_none(),
            epochs,
            selected_epoch,
            selected_value,
            target_syncs,
            wall_time: Duration::ZERO,
        }
    }

    pub fn algo(&self) -> AlgoKind {
        self.config.algo.kind
    }
}

pub struct TrainOutcome {
    pub result: RunResult,
    /// Model snapshot at the selected epoch.
    pub selected_model: Option<QModel>,
}

pub fn run_training(cfg: &RunConfig, data: &TransitionDataset) -> Result<RunResult> {
    train(cfg, data).map(|o| o.result)
}

pub fn train(cfg: &RunConfig, data: &TransitionDataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let started = Instant::now();
    let mut init_rng = rng::stream(cfg.seed, Stream::Init);
    let mut dropout_rng = rng::stream(cfg.seed, Stream::Dropout);
    let mut batch_rng = rng::stream(cfg.seed, Stream::Batch);

    let mut model = QModel::init(cfg.network_spec(), &mut init_rng)?;
    let algo = &cfg.algo;
    let full_batch = (algo.kind == AlgoKind::Nfq)
        .then(|| Batch::from_transitions(data.transitions(), cfg.encoding));

    let mut epochs = Vec::with_capacity(cfg.epochs());
    let mut syncs = Vec::new();
    let mut best: Option<(f64, QModel)> = None;
    let mut loss_sum = 0.0;

    for step in 1..=cfg.total_steps {
        let sampled;
        let batch = match &full_batch {
            Some(b) => b,
            None => {
                let trs = sample_minibatch(data.transitions(), cfg.batch_size, &mut batch_rng)?;
                sampled = Batch::from_transitions(&trs, cfg.encoding);
                &sampled
            }
        };
        let (parts, grads, tape) =
            algos::loss_and_grad(&model, batch, algo, ForwardMode::Train, Some(&mut dropout_rng))?;
        model.adam_step(&grads, cfg.lr);
        model.update_running_stats(&tape);
        loss_sum += parts.total;

        if algo.kind.uses_target_network() && step % cfg.target_update_interval == 0 {
            model.sync_target();
            syncs.push(step);
        }

        if step % cfg.steps_per_epoch == 0 {
            let loss = loss_sum / cfg.steps_per_epoch as f64;
            loss_sum = 0.0;
            let v0 = initial_state_value(&model, algo, cfg.encoding, data)?;
            let epoch = step / cfg.steps_per_epoch;
            if loss.is_finite() && best.as_ref().is_none_or(|(l, _)| loss < *l) {
                best = Some((loss, model.clone()));
            }
            epochs.push(EpochRecord { epoch, loss, v0 });
        }
    }

    let mut result = RunResult::select(cfg.clone(), epochs, syncs);
    result.wall_time = started.elapsed();
    Ok(TrainOutcome {
        result,
        selected_model: best.map(|(_, m)| m),
    })
}

/// Swept values per hyperparameter.
pub const GRID_LR: [f64; 2] = [0.1, 0.01];
pub const GRID_BATCH: [usize; 2] = [8, 16];
pub const GRID_LAYERS: [usize; 2] = [2, 3];
pub const GRID_UNITS: [usize; 2] = [16, 32];
pub const GRID_ACTIVATION: [Activation; 2] = [Activation::Relu, Activation::Tanh];
pub const GRID_DROPOUT: [f64; 2] = [0.1, 0.2];
pub const GRID_SIZE: usize = 64;

/// The `index`-th grid point (lexicographic, learning rate slowest) applied
/// on top of `base`.
pub fn grid_config(base: &RunConfig, index: usize) -> RunConfig {
    assert!(index < GRID_SIZE);
    let bit = |k: usize| (index >> (5 - k)) & 1;
    RunConfig {
        lr: GRID_LR[bit(0)],
        batch_size: GRID_BATCH[bit(1)],
        hidden_layers: GRID_LAYERS[bit(2)],
        hidden_units: GRID_UNITS[bit(3)],
        activation: GRID_ACTIVATION[bit(4)],
        dropout: GRID_DROPOUT[bit(5)],
        ..base.clone()
    }
}

/// Every (algorithm, grid point) run configuration in sweep order, with
/// child seeds derived from `(seed, algorithm, grid index)`.
pub fn grid_configs(algos: &[AlgoKind], base: &RunConfig, seed: u64) -> Vec<RunConfig> {
    algos
        .iter()
        .flat_map(|&kind| {
            (0..GRID_SIZE).map(move |i| {
                let mut cfg = grid_config(base, i);
                cfg.algo = AlgoConfig {
                    kind,
                    ..base.algo.clone()
                };
                cfg.seed = derive_seed(seed, &[kind as u64, i as u64]);
                cfg
            })
        })
        .collect()
}

/// Runs the full grid. `parallel` bounds the number of concurrent runs;
/// results come back in sweep order regardless. `on_run` sees every
/// finished run (with its selected model) and may persist it.
pub fn grid_search_with<F>(
    algos: &[AlgoKind],
    data: &TransitionDataset,
    base: &RunConfig,
    seed: u64,
    parallel: usize,
    on_run: F,
) -> Result<Vec<RunResult>>
where
    F: Fn(usize, &TrainOutcome) -> Result<()> + Sync,
{
    let configs = grid_configs(algos, base, seed);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    pool.install(|| {
        configs
            .par_iter()
            .enumerate()
            .map(|(i, cfg)| {
                let outcome = train(cfg, data)?;
                on_run(i, &outcome)?;
                Ok(outcome.result)
            })
            .collect()
    })
}

pub fn grid_search(
    algos: &[AlgoKind],
    data: &TransitionDataset,
    base: &RunConfig,
    seed: u64,
) -> Result<Vec<RunResult>> {
    let parallel = std::thread::available_parallelism().map_or(1, |n| n.get());
    grid_search_with(algos, data, base, seed, parallel, |_, _| Ok(()))
}

/// Highest selected value among runs whose value is finite and within
/// `bound`; earliest run on ties.
pub fn select_best(results: &[RunResult], bound: f64) -> Option<&RunResult> {
    let mut best: Option<&RunResult> = None;
    for r in results {
        let Some(v) = r.selected_value.filter(|v| v.is_finite() && *v <= bound) else {
            continue;
        };
        if best.is_none_or(|b| v > b.selected_value.unwrap()) {
            best = Some(r);
        }
    }
    best
}

/// Writes `run.json`, `epochs.csv` and, when an epoch was selected,
/// `model.json` into `dir`.
pub fn write_run(dir: impl AsRef<Path>, outcome: &TrainOutcome) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let path = dir.join("run.json");
    let mut f = File::create(&path).map_err(|e| Error::file(&path, e))?;
    serde_json::to_writer_pretty(&mut f, &outcome.result)?;
    f.write_all(b"\n")?;
    write_epochs_csv(dir.join("epochs.csv"), &outcome.result.epochs)?;
    if let Some(model) = &outcome.selected_model {
        model.save(dir.join("model.json"))?;
    }
    Ok(())
}

pub fn write_epochs_csv(path: impl AsRef<Path>, epochs: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "loss", "v0"])?;
    for e in epochs {
        w.write_record([e.epoch.to_string(), e.loss.to_string(), e.v0.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_epochs_csv(path: impl AsRef<Path>) -> Result<Vec<EpochRecord>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |k: usize, name: &str| -> Result<&str> {
            rec.get(k).ok_or_else(|| Error::Parse {
                line: i + 2,
                field: name.into(),
                message: "missing column".into(),
            })
        };
        let num = |k: usize, name: &str| -> Result<f64> {
            field(k, name)?.trim().parse::<f64>().map_err(|e| Error::Parse {
                line: i + 2,
                field: name.into(),
                message: e.to_string(),
            })
        };
        let epoch = field(0, "epoch")?.trim().parse::<usize>().map_err(|e| Error::Parse {
            line: i + 2,
            field: "epoch".into(),
            message: e.to_string(),
        })?;
        out.push(EpochRecord {
            epoch,
            loss: num(1, "loss")?,
            v0: num(2, "v0")?,
        });
    }
    Ok(out)
}

pub const MANIFEST_HEADER: [&str; 13] = [
    "run_dir",
    "algo",
    "config_index",
    "lr",
    "batch_size",
    "hidden_layers",
    "hidden_units",
    "activation",
    "dropout",
    "seed",
    "selected_epoch",
    "selected_value",
    "diverged",
];

pub fn run_dir_name(result: &RunResult, config_index: usize) -> String {
    format!("{}_{:02}", result.algo(), config_index)
}

pub fn write_manifest(path: impl AsRef<Path>, results: &[RunResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(MANIFEST_HEADER)?;
    for (i, r) in results.iter().enumerate() {
        let idx = i % GRID_SIZE;
        let c = &r.config;
        w.write_record([
            run_dir_name(r, idx),
            r.algo().to_string(),
            idx.to_string(),
            c.lr.to_string(),
            c.batch_size.to_string(),
            c.hidden_layers.to_string(),
            c.hidden_units.to_string(),
            c.activation.to_string(),
            c.dropout.to_string(),
            c.seed.to_string(),
            r.selected_epoch.map_or(String::new(), |e| e.to_string()),
            r.selected_value.map_or(String::new(), |v| v.to_string()),
            r.diverged.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Loads every run listed in `<dir>/manifest.csv`, in manifest order.
pub fn load_runs(dir: impl AsRef<Path>) -> Result<Vec<RunResult>> {
    let dir = dir.as_ref();
    let mut r = csv::Reader::from_path(dir.join("manifest.csv"))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let run_dir = rec.get(0).unwrap_or_default();
        let path = dir.join(run_dir).join("run.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::file(&path, e))?;
        out.push(serde_json::from_str(&text)?);
    }
    Ok(out)
}
