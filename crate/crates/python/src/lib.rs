//! Python bindings: simulate datasets, train and compare offline RL agents.

use std::collections::HashMap;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use emorl::algos::AlgoKind;
use emorl::dataset::{DatasetStats, TransitionDataset};
use emorl::eval;
use emorl::mdp::{Arousal, Emotion, GameStatus, State};
use emorl::sim::{SimConfig, SimModel};
use emorl::train::{self, RunConfig, RunResult};

fn to_py(e: emorl::Error) -> PyErr {
    match e {
        emorl::Error::Io(_) | emorl::Error::File { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = emorl::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

/// Reward for arriving in the state given by its three factor tokens.
#[pyfunction]
fn reward(gs: &str, fe: &str, pa: &str) -> PyResult<f64> {
    let s = State {
        gs: parse::<GameStatus>(gs)?,
        fe: parse::<Emotion>(fe)?,
        pa: parse::<Arousal>(pa)?,
    };
    Ok(emorl::mdp::reward(s))
}

/// Largest discounted return over `episode_len` steps.
#[pyfunction]
#[pyo3(signature = (episode_len = 60, gamma = 0.99, r_max = 1.0))]
fn upper_bound(episode_len: usize, gamma: f64, r_max: f64) -> f64 {
    eval::upper_bound(episode_len, gamma, r_max)
}

/// State labels in index order, e.g. "draw/neutral/absent".
#[pyfunction]
fn state_labels() -> Vec<String> {
    State::all().map(|s| s.label()).collect()
}

/// Action labels in index order, e.g. "happy/decrease".
#[pyfunction]
fn action_labels() -> Vec<String> {
    emorl::mdp::Action::all().map(|a| a.label()).collect()
}

#[pyclass(name = "Dataset", frozen)]
struct PyDataset {
    inner: TransitionDataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyDataset {
            inner: TransitionDataset::load(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn episode_count(&self) -> usize {
        self.inner.episode_count()
    }

    #[getter]
    fn episode_lengths(&self) -> Vec<usize> {
        self.inner.episode_lengths().to_vec()
    }

    #[getter]
    fn exploration_rate(&self) -> f64 {
        emorl::dataset::exploration_rate(self.inner.transitions())
    }

    /// 18 x 9 visit counts, rows by state index.
    fn visit_counts(&self) -> Vec<Vec<u32>> {
        emorl::dataset::visit_counts(self.inner.transitions())
            .iter()
            .map(|r| r.to_vec())
            .collect()
    }

    /// Summary statistics as JSON text.
    #[pyo3(signature = (window = 5))]
    fn stats_json(&self, window: usize) -> PyResult<String> {
        let stats = DatasetStats::compute(&self.inner, window.max(1));
        serde_json::to_string(&stats).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn concat(&self, other: &PyDataset) -> PyDataset {
        PyDataset {
            inner: self.inner.concat(&other.inner),
        }
    }
}

#[pyclass(name = "Simulator", frozen)]
struct PySimulator {
    inner: SimModel,
}

#[pymethods]
impl PySimulator {
    /// Built-in tables, or a JSON configuration (partial documents fill in
    /// defaults).
    #[new]
    #[pyo3(signature = (config_json = None))]
    fn new(config_json: Option<&str>) -> PyResult<Self> {
        let cfg = match config_json {
            Some(text) => serde_json::from_str::<SimConfig>(text)
                .map_err(|e| PyValueError::new_err(e.to_string()))?,
            None => SimConfig::default(),
        };
        Ok(PySimulator {
            inner: SimModel::new(cfg).map_err(to_py)?,
        })
    }

    fn generate_dataset(&self, seed: u64) -> PyDataset {
        PyDataset {
            inner: self.inner.generate_dataset(seed),
        }
    }

    /// Next-state probabilities (by state index) for state and action indices.
    fn transition_distribution(&self, state: usize, action: usize) -> PyResult<Vec<f64>> {
        let s = State::from_index(state).ok_or_else(|| PyValueError::new_err("state index out of range"))?;
        let a = emorl::mdp::Action::from_index(action)
            .ok_or_else(|| PyValueError::new_err("action index out of range"))?;
        Ok(self.inner.transition_distribution(s, a).to_vec())
    }

    /// Optimal Q matrix (18 x 9) by value iteration.
    #[pyo3(signature = (gamma = 0.99, tol = 1e-10))]
    fn optimal_q(&self, py: Python<'_>, gamma: f64, tol: f64) -> PyResult<Vec<Vec<f64>>> {
        let q = py.detach(|| self.inner.exact_q_oracle(gamma, tol)).map_err(to_py)?;
        Ok(q.values.iter().map(|r| r.to_vec()).collect())
    }
}

#[pyclass(name = "RunResult", frozen, from_py_object)]
#[derive(Clone)]
struct PyRunResult {
    inner: RunResult,
}

#[pymethods]
impl PyRunResult {
    #[getter]
    fn algo(&self) -> String {
        self.inner.algo().to_string()
    }

    #[getter]
    fn selected_epoch(&self) -> Option<usize> {
        self.inner.selected_epoch
    }

    #[getter]
    fn selected_value(&self) -> Option<f64> {
        self.inner.selected_value
    }

    #[getter]
    fn diverged(&self) -> bool {
        self.inner.diverged
    }

    #[getter]
    fn wall_time(&self) -> f64 {
        self.inner.wall_time.as_secs_f64()
    }

    /// `(epoch, mean loss, initial-state value)` per epoch.
    #[getter]
    fn epochs(&self) -> Vec<(usize, f64, f64)> {
        self.inner.epochs.iter().map(|e| (e.epoch, e.loss, e.v0)).collect()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        let none = || "None".to_string();
        format!(
            "RunResult(algo='{}', selected_epoch={}, selected_value={}, diverged={})",
            self.inner.algo(),
            self.inner.selected_epoch.map_or_else(none, |e| e.to_string()),
            self.inner.selected_value.map_or_else(none, |v| format!("{v:?}")),
            if self.inner.diverged { "True" } else { "False" }
        )
    }
}

/// Builds a run configuration from keyword overrides on top of defaults.
fn run_config(algo: &str, overrides: Option<HashMap<String, f64>>) -> PyResult<RunConfig> {
    let mut cfg = RunConfig::default();
    cfg.algo.kind = parse::<AlgoKind>(algo)?;
    for (k, v) in overrides.unwrap_or_default() {
        let as_count = || -> PyResult<usize> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(PyValueError::new_err(format!("{k} must be a non-negative integer")))
            }
        };
        match k.as_str() {
            "lr" => cfg.lr = v,
            "gamma" => cfg.algo.gamma = v,
            "dropout" => cfg.dropout = v,
            "bcq_tau" => cfg.algo.bcq_tau = v,
            "bcq_gen_weight" => cfg.algo.bcq_gen_weight = v,
            "cql_alpha" => cfg.algo.cql_alpha = v,
            "batch_size" => cfg.batch_size = as_count()?,
            "hidden_layers" => cfg.hidden_layers = as_count()?,
            "hidden_units" => cfg.hidden_units = as_count()?,
            "total_steps" => cfg.total_steps = as_count()?,
            "steps_per_epoch" => cfg.steps_per_epoch = as_count()?,
            "target_update_interval" => cfg.target_update_interval = as_count()?,
            "seed" => cfg.seed = as_count()? as u64,
            other => return Err(PyValueError::new_err(format!("unknown setting `{other}`"))),
        }
    }
    cfg.validate().map_err(to_py)?;
    Ok(cfg)
}

/// Trains one agent. `settings` overrides numeric defaults (lr, batch_size,
/// hidden_layers, hidden_units, dropout, gamma, total_steps, seed, ...);
/// `activation` is "relu" or "tanh".
#[pyfunction]
#[pyo3(signature = (algo, data, settings = None, activation = None))]
fn train_agent(
    py: Python<'_>,
    algo: &str,
    data: &PyDataset,
    settings: Option<HashMap<String, f64>>,
    activation: Option<&str>,
) -> PyResult<PyRunResult> {
    let mut cfg = run_config(algo, settings)?;
    if let Some(a) = activation {
        cfg.activation = parse(a)?;
    }
    let result = py
        .detach(|| train::run_training(&cfg, &data.inner))
        .map_err(to_py)?;
    Ok(PyRunResult { inner: result })
}

/// Runs the 64-point hyperparameter grid for each named algorithm.
#[pyfunction]
#[pyo3(signature = (algos, data, seed = 0, total_steps = 10_000, parallel = None))]
fn grid_search(
    py: Python<'_>,
    algos: Vec<String>,
    data: &PyDataset,
    seed: u64,
    total_steps: usize,
    parallel: Option<usize>,
) -> PyResult<Vec<PyRunResult>> {
    let kinds = algos.iter().map(|a| parse::<AlgoKind>(a)).collect::<PyResult<Vec<_>>>()?;
    let base = RunConfig {
        total_steps,
        ..RunConfig::default()
    };
    base.validate().map_err(to_py)?;
    let workers = parallel.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let results = py
        .detach(|| train::grid_search_with(&kinds, &data.inner, &base, seed, workers, |_, _| Ok(())))
        .map_err(to_py)?;
    Ok(results.into_iter().map(|inner| PyRunResult { inner }).collect())
}

/// Markdown comparison of the best surviving run per algorithm.
#[pyfunction]
#[pyo3(signature = (results, bound = None))]
fn report_markdown(results: Vec<PyRunResult>, bound: Option<f64>) -> String {
    let runs: Vec<RunResult> = results.into_iter().map(|r| r.inner).collect();
    let bound = bound.unwrap_or_else(|| eval::upper_bound(60, 0.99, 1.0));
    eval::build_report(&runs, bound).to_markdown()
}

#[pymodule]
fn emorl_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PySimulator>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(reward, m)?)?;
    m.add_function(wrap_pyfunction!(upper_bound, m)?)?;
    m.add_function(wrap_pyfunction!(state_labels, m)?)?;
    m.add_function(wrap_pyfunction!(action_labels, m)?)?;
    m.add_function(wrap_pyfunction!(train_agent, m)?)?;
    m.add_function(wrap_pyfunction!(grid_search, m)?)?;
    m.add_function(wrap_pyfunction!(report_markdown, m)?)?;
    Ok(())
}
