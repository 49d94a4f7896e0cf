//! Off-policy evaluation: the initial-state value estimate, the analytic
//! overestimation bound and the per-algorithm comparison report.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use serde::Serialize;

use crate::algos::{self, AlgoConfig, AlgoKind};
use crate::dataset::{initial_states, TransitionDataset};
use crate::error::{Error, Result};
use crate::mdp::{ObservationEncoding, State};
use crate::nn::{Net, QModel};
use crate::sim::QTable;
use crate::train::{select_best, RunResult};

/// Mean over the dataset's episode start states of `Q(s, pi(s))`, with the
/// online network in eval mode and `pi` the algorithm's greedy policy.
pub fn initial_state_value(
    model: &QModel,
    cfg: &AlgoConfig,
    enc: ObservationEncoding,
    data: &TransitionDataset,
) -> Result<f64> {
    let starts = initial_states(data.transitions());
    if starts.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let actions = algos::greedy_actions(model, &starts, cfg, enc)?;
    let mut x = Array2::zeros((starts.len(), enc.dim()));
    for (i, s) in starts.iter().enumerate() {
        enc.write(*s, x.row_mut(i).as_slice_mut().unwrap());
    }
    let q = model.eval(x.view(), Net::Online)?.q;
    let total: f64 = actions
        .iter()
        .enumerate()
        .map(|(i, a)| q[[i, a.index()]])
        .sum();
    Ok(total / starts.len() as f64)
}

/// Same estimate with a tabular Q-function and its greedy policy.
pub fn table_initial_state_value(q: &QTable, starts: &[State]) -> f64 {
    let total: f64 = starts.iter().map(|s| q.value(*s)).sum();
    total / starts.len() as f64
}

/// Largest achievable discounted return over `max_len` steps with
/// per-step reward at most `r_max`.
pub fn upper_bound(max_len: usize, gamma: f64, r_max: f64) -> f64 {
    if gamma == 1.0 {
        return r_max * max_len as f64;
    }
    r_max * (1.0 - gamma.powi(max_len as i32)) / (1.0 - gamma)
}

/// One line of the comparison: the best surviving run of an algorithm, or
/// a placeholder when none survived the filter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub algo: AlgoKind,
    pub best: Option<RunResult>,
    /// Runs excluded by the filter: non-finite value or above the bound.
    pub filtered_count: usize,
    /// Runs with no epoch of finite loss.
    pub diverged: usize,
    pub total: usize,
}

impl ReportRow {
    pub fn value(&self) -> Option<f64> {
        self.best.as_ref().and_then(|r| r.selected_value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub bound: f64,
    /// Surviving algorithms by value (descending), then excluded ones.
    pub rows: Vec<ReportRow>,
}

pub fn build_report(results: &[RunResult], bound: f64) -> EvalReport {
    let mut rows: Vec<ReportRow> = AlgoKind::ALL
        .iter()
        .filter_map(|&kind| {
            let runs: Vec<RunResult> = results.iter().filter(|r| r.algo() == kind).cloned().collect();
            if runs.is_empty() {
                return None;
            }
            let filtered_count = runs
                .iter()
                .filter(|r| !r.selected_value.is_some_and(|v| v.is_finite() && v <= bound))
                .count();
            Some(ReportRow {
                algo: kind,
                best: select_best(&runs, bound).cloned(),
                filtered_count,
                diverged: runs.iter().filter(|r| r.diverged).count(),
                total: runs.len(),
            })
        })
        .collect();
    // stable sort keeps the fixed algorithm order among excluded rows
    rows.sort_by(|a, b| match (a.value(), b.value()) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    EvalReport { bound, rows }
}

impl EvalReport {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "algo",
            "lr",
            "batch_size",
            "hidden_layers",
            "hidden_units",
            "activation",
            "dropout",
            "v0",
            "filtered_count",
            "diverged",
        ])?;
        for row in &self.rows {
            let mut rec = vec![row.algo.to_string()];
            match &row.best {
                Some(r) => {
                    let c = &r.config;
                    rec.extend([
                        c.lr.to_string(),
                        c.batch_size.to_string(),
                        c.hidden_layers.to_string(),
                        c.hidden_units.to_string(),
                        c.activation.to_string(),
                        c.dropout.to_string(),
                        r.selected_value.unwrap().to_string(),
                    ]);
                }
                None => rec.extend(std::iter::repeat_n(String::new(), 7)),
            }
            rec.push(row.filtered_count.to_string());
            rec.push(row.diverged.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# Offline policy comparison\n");
        let _ = writeln!(s, "Overestimation bound: {:.2}\n", self.bound);
        s.push_str(
            "| Algorithm | Learning rate | Batch size | Hidden layers | Hidden units | Activation | Dropout | V(s0) |\n",
        );
        s.push_str("|---|---|---|---|---|---|---|---|\n");
        for row in &self.rows {
            match &row.best {
                Some(r) => {
                    let c = &r.config;
                    let _ = writeln!(
                        s,
                        "| {} | {} | {} | {} | {} | {} | {} | {:.4} |",
                        row.algo.label(),
                        c.lr,
                        c.batch_size,
                        c.hidden_layers,
                        c.hidden_units,
                        c.activation,
                        c.dropout,
                        r.selected_value.unwrap()
                    );
                }
                None => {
                    let _ = writeln!(s, "| {} | - | - | - | - | - | - | excluded |", row.algo.label());
                }
            }
        }
        s.push('\n');
        for row in &self.rows {
            if row.best.is_none() {
                let why = if row.diverged == row.total {
                    "every run diverged".to_string()
                } else {
                    format!(
                        "all {} runs were non-finite or above the bound ({} diverged)",
                        row.total, row.diverged
                    )
                };
                let _ = writeln!(s, "- {} excluded: {why}.", row.algo.label());
            } else if row.filtered_count > 0 {
                let _ = writeln!(
                    s,
                    "- {}: {} of {} runs filtered ({} diverged).",
                    row.algo.label(),
                    row.filtered_count,
                    row.total,
                    row.diverged
                );
            }
        }
        if let Some(r) = self.rows.iter().find(|r| r.algo == AlgoKind::Bcq) {
            if let Some(best) = &r.best {
                let _ = writeln!(
                    s,
                    "- BCQ values use the support-constrained greedy policy (tau = {}).",
                    best.config.algo.bcq_tau
                );
            }
        }
        s
    }

    pub fn write_markdown(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_markdown()).map_err(|e| Error::file(path, e))
    }
}
