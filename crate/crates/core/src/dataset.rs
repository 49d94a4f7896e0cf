//! Transition datasets: storage, JSON-lines serialization, sampling and the
//! descriptive statistics used to judge how well a dataset covers the
//! state-action space.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::mdp::{Action, Arousal, Difficulty, Emotion, GameStatus, State, NUM_ACTIONS, NUM_STATES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub episode: usize,
    pub t: usize,
    pub state: State,
    pub action: Action,
    pub reward: f64,
    pub next_state: State,
    pub terminal: bool,
}

/// An ordered, validated collection of episodes.
///
/// Episodes are stored contiguously with ids `0..N` and timesteps
/// consecutive from 0 inside each episode.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDataset {
    transitions: Vec<Transition>,
    episode_lengths: Vec<usize>,
}

impl TransitionDataset {
    pub fn new(transitions: Vec<Transition>) -> Result<Self> {
        let mut episode_lengths: Vec<usize> = Vec::new();
        for (i, tr) in transitions.iter().enumerate() {
            let current = episode_lengths.len().checked_sub(1);
            if Some(tr.episode) != current {
                // A new episode must be the next id in sequence.
                if tr.episode != episode_lengths.len() {
                    let missing = episode_lengths.len();
                    if tr.episode > missing {
                        return Err(Error::EmptyEpisode(missing));
                    }
                    return Err(Error::InvalidDataset(format!(
                        "record {i}: episode {} appears out of order",
                        tr.episode
                    )));
                }
                episode_lengths.push(0);
            }
            let len = episode_lengths.last_mut().unwrap();
            if tr.t != *len {
                return Err(Error::InvalidDataset(format!(
                    "record {i}: episode {} expected t={} but found t={}",
                    tr.episode, len, tr.t
                )));
            }
            if !tr.reward.is_finite() || !(-1.0..=1.0).contains(&tr.reward) {
                return Err(Error::InvalidDataset(format!(
                    "record {i}: reward {} outside [-1, 1]",
                    tr.reward
                )));
            }
            *len += 1;
        }
        if episode_lengths.is_empty() {
            return Err(Error::EmptyEpisode(0));
        }
        Ok(Self {
            transitions,
            episode_lengths,
        })
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn episode_count(&self) -> usize {
        self.episode_lengths.len()
    }

    pub fn episode_lengths(&self) -> &[usize] {
        &self.episode_lengths
    }

    /// Appends the episodes of `other` after those of `self`, renumbering them.
    pub fn concat(&self, other: &TransitionDataset) -> TransitionDataset {
        let offset = self.episode_count();
        let mut transitions = self.transitions.clone();
        transitions.extend(other.transitions.iter().map(|tr| Transition {
            episode: tr.episode + offset,
            ..*tr
        }));
        let mut episode_lengths = self.episode_lengths.clone();
        episode_lengths.extend_from_slice(&other.episode_lengths);
        TransitionDataset {
            transitions,
            episode_lengths,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::file(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_jsonl(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, out: &mut W) -> Result<()> {
        for tr in &self.transitions {
            serde_json::to_writer(&mut *out, &Record::from(tr))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::file(path, e))?;
        Self::read_jsonl(BufReader::new(file))
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut transitions = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            transitions.push(parse_record(i + 1, &line)?);
        }
        Self::new(transitions)
    }
}

/// On-disk layout of one transition.
#[derive(Serialize)]
struct Record {
    episode: usize,
    t: usize,
    gs: GameStatus,
    fe: Emotion,
    pa: Arousal,
    fr: Emotion,
    da: Difficulty,
    reward: f64,
    next_gs: GameStatus,
    next_fe: Emotion,
    next_pa: Arousal,
    terminal: bool,
}

impl From<&Transition> for Record {
    fn from(tr: &Transition) -> Self {
        Record {
            episode: tr.episode,
            t: tr.t,
            gs: tr.state.gs,
            fe: tr.state.fe,
            pa: tr.state.pa,
            fr: tr.action.fr,
            da: tr.action.da,
            reward: tr.reward,
            next_gs: tr.next_state.gs,
            next_fe: tr.next_state.fe,
            next_pa: tr.next_state.pa,
            terminal: tr.terminal,
        }
    }
}

fn parse_record(line: usize, text: &str) -> Result<Transition> {
    let err = |field: &str, message: String| Error::Parse {
        line,
        field: field.to_string(),
        message,
    };
    let value: Value =
        serde_json::from_str(text).map_err(|e| err("<record>", format!("malformed JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| err("<record>", "expected a JSON object".into()))?;

    let get = |field: &str| -> Result<&Value> {
        obj.get(field)
            .ok_or_else(|| err(field, "missing field".into()))
    };
    let uint = |field: &str| -> Result<usize> {
        get(field)?
            .as_u64()
            .map(|v| v as usize)
            .ok_or_else(|| err(field, "expected a non-negative integer".into()))
    };
    fn token<T: std::str::FromStr<Err = Error>>(
        obj: &Map<String, Value>,
        line: usize,
        field: &str,
    ) -> Result<T> {
        let perr = |message: String| Error::Parse {
            line,
            field: field.to_string(),
            message,
        };
        let raw = obj
            .get(field)
            .ok_or_else(|| perr("missing field".into()))?
            .as_str()
            .ok_or_else(|| perr("expected a string token".into()))?;
        raw.parse::<T>().map_err(|e| perr(e.to_string()))
    }

    let reward = get("reward")?
        .as_f64()
        .ok_or_else(|| err("reward", "expected a number".into()))?;
    let terminal = get("terminal")?
        .as_bool()
        .ok_or_else(|| err("terminal", "expected a boolean".into()))?;

    Ok(Transition {
        episode: uint("episode")?,
        t: uint("t")?,
        state: State::new(
            token(obj, line, "gs")?,
            token(obj, line, "fe")?,
            token(obj, line, "pa")?,
        ),
        action: Action::new(token(obj, line, "fr")?, token(obj, line, "da")?),
        reward,
        next_state: State::new(
            token(obj, line, "next_gs")?,
            token(obj, line, "next_fe")?,
            token(obj, line, "next_pa")?,
        ),
        terminal,
    })
}

pub type VisitCounts = [[u32; NUM_ACTIONS]; NUM_STATES];

/// Number of transitions per (state, action) cell.
pub fn visit_counts(transitions: &[Transition]) -> VisitCounts {
    let mut counts = [[0u32; NUM_ACTIONS]; NUM_STATES];
    for tr in transitions {
        counts[tr.state.index()][tr.action.index()] += 1;
    }
    counts
}

/// Fraction of the 162 (state, action) cells visited at least once.
pub fn exploration_rate(transitions: &[Transition]) -> f64 {
    let visited = visit_counts(transitions)
        .iter()
        .flatten()
        .filter(|&&c| c > 0)
        .count();
    visited as f64 / (NUM_STATES * NUM_ACTIONS) as f64
}

/// Mean reward per timestep across episodes, smoothed with a centered
/// moving average of width `window` (truncated at the boundaries).
pub fn reward_trend(transitions: &[Transition], window: usize) -> Vec<(usize, f64)> {
    let window = window.max(1);
    let horizon = transitions.iter().map(|tr| tr.t + 1).max().unwrap_or(0);
    let mut sums = vec![0.0; horizon];
    let mut counts = vec![0usize; horizon];
    for tr in transitions {
        sums[tr.t] += tr.reward;
        counts[tr.t] += 1;
    }
    let means: Vec<(usize, f64)> = (0..horizon)
        .filter(|&t| counts[t] > 0)
        .map(|t| (t, sums[t] / counts[t] as f64))
        .collect();

    let half_lo = (window - 1) / 2;
    let half_hi = window / 2;
    (0..means.len())
        .map(|i| {
            let lo = i.saturating_sub(half_lo);
            let hi = (i + half_hi).min(means.len() - 1);
            let slice = &means[lo..=hi];
            let avg = slice.iter().map(|(_, m)| m).sum::<f64>() / slice.len() as f64;
            (means[i].0, avg)
        })
        .collect()
}

/// First state of every episode, with multiplicity.
pub fn initial_states(transitions: &[Transition]) -> Vec<State> {
    transitions
        .iter()
        .filter(|tr| tr.t == 0)
        .map(|tr| tr.state)
        .collect()
}

/// `n` uniform draws with replacement.
pub fn sample_minibatch<R: Rng + ?Sized>(
    transitions: &[Transition],
    n: usize,
    rng: &mut R,
) -> Result<Vec<Transition>> {
    if transitions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok((0..n)
        .map(|_| transitions[rng.random_range(0..transitions.len())])
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub episodes: usize,
    pub steps: usize,
    pub exploration_rate: f64,
    pub episode_length_mean: f64,
    pub episode_length_sd: f64,
    pub episode_lengths: Vec<usize>,
    #[serde(skip)]
    pub visit_counts: VisitCounts,
    #[serde(skip)]
    pub reward_trend: Vec<(usize, f64)>,
}

impl DatasetStats {
    pub fn compute(data: &TransitionDataset, window: usize) -> Self {
        let lengths = data.episode_lengths();
        let n = lengths.len() as f64;
        let mean = lengths.iter().sum::<usize>() as f64 / n;
        let sd = if lengths.len() > 1 {
            (lengths
                .iter()
                .map(|&l| (l as f64 - mean).powi(2))
                .sum::<f64>()
                / (n - 1.0))
                .sqrt()
        } else {
            0.0
        };
        DatasetStats {
            episodes: data.episode_count(),
            steps: data.len(),
            exploration_rate: exploration_rate(data.transitions()),
            episode_length_mean: mean,
            episode_length_sd: sd,
            episode_lengths: lengths.to_vec(),
            visit_counts: visit_counts(data.transitions()),
            reward_trend: reward_trend(data.transitions(), window),
        }
    }

    /// Writes `visit_counts.csv`, `reward_trend.csv` and `summary.json` into `dir`.
    pub fn write_sidecars(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;

        let mut w = csv::Writer::from_path(dir.join("visit_counts.csv"))?;
        let mut header = vec!["state".to_string()];
        header.extend(Action::all().map(Action::label));
        w.write_record(&header)?;
        for (s, row) in State::all().zip(self.visit_counts.iter()) {
            let mut rec = vec![s.label()];
            rec.extend(row.iter().map(u32::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("reward_trend.csv"))?;
        w.write_record(["t", "mean_reward"])?;
        for (t, m) in &self.reward_trend {
            w.write_record([t.to_string(), m.to_string()])?;
        }
        w.flush()?;

        let path = dir.join("summary.json");
        let mut f = File::create(&path).map_err(|e| Error::file(&path, e))?;
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n")?;
        Ok(())
    }
}
