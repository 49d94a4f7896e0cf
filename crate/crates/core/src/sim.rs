//! A fully specified stochastic stand-in for the participant and the
//! checkers game. Game status evolves under the robot's difficulty
//! adjustment, the participant's facial emotion responds to the new game
//! status and the robot's displayed expression, and arousal depends on the
//! new game status shifted by the difficulty change.
//!
//! Because the dynamics are Markov in the 18 observed states, value
//! iteration over this model gives an exact Q* to compare learners against.

use std::ops::Index;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Transition, TransitionDataset};
use crate::error::{Error, Result};
use crate::mdp::{
    reward, Action, Arousal, Difficulty, Emotion, GameStatus, State, NUM_ACTIONS, NUM_STATES,
};
use crate::rng::{self, Stream};

const STOCHASTIC_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ByDifficulty<T> {
    pub constant: T,
    pub decrease: T,
    pub increase: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ByGame<T> {
    pub losing: T,
    pub draw: T,
    pub winning: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ByEmotion<T> {
    pub angry: T,
    pub happy: T,
    pub neutral: T,
}

impl<T> Index<Difficulty> for ByDifficulty<T> {
    type Output = T;
    fn index(&self, d: Difficulty) -> &T {
        match d {
            Difficulty::Constant => &self.constant,
            Difficulty::Decrease => &self.decrease,
            Difficulty::Increase => &self.increase,
        }
    }
}

impl<T> Index<GameStatus> for ByGame<T> {
    type Output = T;
    fn index(&self, g: GameStatus) -> &T {
        match g {
            GameStatus::Losing => &self.losing,
            GameStatus::Draw => &self.draw,
            GameStatus::Winning => &self.winning,
        }
    }
}

impl<T> Index<Emotion> for ByEmotion<T> {
    type Output = T;
    fn index(&self, e: Emotion) -> &T {
        match e {
            Emotion::Angry => &self.angry,
            Emotion::Happy => &self.happy,
            Emotion::Neutral => &self.neutral,
        }
    }
}

/// Parameters of the simulated participant and game.
///
/// Distribution rows are ordered like the enums: game status over
/// (losing, draw, winning), emotion over (angry, happy, neutral).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// `P(gs' | gs, da)`, one row per current game status.
    pub gs_table: ByDifficulty<ByGame<[f64; 3]>>,
    /// `P(fe' | gs', fr)`.
    pub fe_table: ByGame<ByEmotion<[f64; 3]>>,
    /// `P(pa' = present | gs')` before the difficulty shift.
    pub pa_base: ByGame<f64>,
    /// Additive shift of the arousal probability, clamped to [0, 1].
    pub pa_da_shift: ByDifficulty<f64>,
    /// Inclusive range of episode lengths.
    pub episode_length_range: [usize; 2],
    pub episode_count: usize,
    pub start_state: State,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            gs_table: ByDifficulty {
                constant: ByGame {
                    losing: [0.60, 0.30, 0.10],
                    draw: [0.25, 0.50, 0.25],
                    winning: [0.10, 0.30, 0.60],
                },
                increase: ByGame {
                    losing: [0.45, 0.35, 0.20],
                    draw: [0.15, 0.45, 0.40],
                    winning: [0.05, 0.20, 0.75],
                },
                decrease: ByGame {
                    losing: [0.75, 0.20, 0.05],
                    draw: [0.40, 0.45, 0.15],
                    winning: [0.20, 0.35, 0.45],
                },
            },
            fe_table: ByGame {
                losing: ByEmotion {
                    happy: [0.05, 0.70, 0.25],
                    neutral: [0.10, 0.50, 0.40],
                    angry: [0.25, 0.35, 0.40],
                },
                draw: ByEmotion {
                    happy: [0.10, 0.50, 0.40],
                    neutral: [0.15, 0.35, 0.50],
                    angry: [0.30, 0.20, 0.50],
                },
                winning: ByEmotion {
                    happy: [0.30, 0.25, 0.45],
                    neutral: [0.35, 0.15, 0.50],
                    angry: [0.50, 0.10, 0.40],
                },
            },
            pa_base: ByGame {
                losing: 0.60,
                draw: 0.70,
                winning: 0.40,
            },
            pa_da_shift: ByDifficulty {
                constant: 0.0,
                decrease: -0.1,
                increase: 0.1,
            },
            episode_length_range: [35, 58],
            episode_count: 5,
            start_state: State::new(GameStatus::Draw, Emotion::Neutral, Arousal::Absent),
        }
    }
}

impl SimConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        fn check_row(name: &str, row: &[f64; 3]) -> Result<()> {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::InvalidConfig(format!("{name}: negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidConfig(format!("{name}: row sums to {sum}, not 1")));
            }
            Ok(())
        }
        for &da in Difficulty::ALL {
            for &gs in GameStatus::ALL {
                check_row(&format!("gs_table[{da}][{gs}]"), &self.gs_table[da][gs])?;
            }
        }
        for &gs in GameStatus::ALL {
            for &fr in Emotion::ALL {
                check_row(&format!("fe_table[{gs}][{fr}]"), &self.fe_table[gs][fr])?;
            }
            let p = self.pa_base[gs];
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("pa_base[{gs}] = {p} outside [0, 1]")));
            }
        }
        for &da in Difficulty::ALL {
            if !self.pa_da_shift[da].is_finite() {
                return Err(Error::InvalidConfig(format!("pa_da_shift[{da}] is not finite")));
            }
        }
        let [lo, hi] = self.episode_length_range;
        if lo == 0 || lo > hi {
            return Err(Error::InvalidConfig(format!(
                "episode_length_range [{lo}, {hi}] must satisfy 1 <= lo <= hi"
            )));
        }
        if self.episode_count == 0 {
            return Err(Error::InvalidConfig("episode_count must be at least 1".into()));
        }
        Ok(())
    }

    fn arousal_probability(&self, next_gs: GameStatus, da: Difficulty) -> f64 {
        (self.pa_base[next_gs] + self.pa_da_shift[da]).clamp(0.0, 1.0)
    }
}

/// A validated simulator with its transition tensor precomputed.
#[derive(Debug, Clone)]
pub struct SimModel {
    cfg: SimConfig,
    // [state][action] -> distribution over next states
    table: Vec<[f64; NUM_STATES]>,
}

impl SimModel {
    pub fn new(cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        let mut table = Vec::with_capacity(NUM_STATES * NUM_ACTIONS);
        for s in State::all() {
            for a in Action::all() {
                let mut row = [0.0; NUM_STATES];
                for next in State::all() {
                    let p_gs = cfg.gs_table[a.da][s.gs][next.gs.index()];
                    let p_fe = cfg.fe_table[next.gs][a.fr][next.fe.index()];
                    let present = cfg.arousal_probability(next.gs, a.da);
                    let p_pa = match next.pa {
                        Arousal::Present => present,
                        Arousal::Absent => 1.0 - present,
                    };
                    row[next.index()] = p_gs * p_fe * p_pa;
                }
                table.push(row);
            }
        }
        Ok(Self { cfg, table })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    /// `P(s' | s, a)` over the 18 next states.
    pub fn transition_distribution(&self, s: State, a: Action) -> &[f64; NUM_STATES] {
        &self.table[s.index() * NUM_ACTIONS + a.index()]
    }

    pub fn step<R: Rng + ?Sized>(&self, s: State, a: Action, rng: &mut R) -> State {
        let dist = self.transition_distribution(s, a);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = 0;
        for (i, &p) in dist.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            acc += p;
            last = i;
            if u < acc {
                return State::from_index(i).unwrap();
            }
        }
        State::from_index(last).unwrap()
    }

    /// Rolls out `episode_count` episodes under a uniform-random behavior
    /// policy. Every episode is truncated (never terminal).
    pub fn generate_dataset(&self, seed: u64) -> TransitionDataset {
        let mut rng = rng::stream(seed, Stream::Dataset);
        let [lo, hi] = self.cfg.episode_length_range;
        let mut transitions = Vec::new();
        for episode in 0..self.cfg.episode_count {
            let len = rng.random_range(lo..=hi);
            let mut s = self.cfg.start_state;
            for t in 0..len {
                let a = Action::from_index(rng.random_range(0..NUM_ACTIONS)).unwrap();
                let next = self.step(s, a, &mut rng);
                transitions.push(Transition {
                    episode,
                    t,
                    state: s,
                    action: a,
                    reward: reward(next),
                    next_state: next,
                    terminal: false,
                });
                s = next;
            }
        }
        TransitionDataset::new(transitions).expect("generated episodes are non-empty")
    }

    pub fn exact_q_oracle(&self, gamma: f64, tol: f64) -> Result<QTable> {
        self.value_iteration(gamma, tol, reward).map(|(q, _)| q)
    }

    /// Value iteration with an arbitrary reward on the next state. Returns
    /// the fixed point and the max-norm change of every sweep.
    pub fn value_iteration(
        &self,
        gamma: f64,
        tol: f64,
        reward_fn: impl Fn(State) -> f64,
    ) -> Result<(QTable, Vec<f64>)> {
        const MAX_SWEEPS: usize = 200_000;
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidConfig(format!("gamma {gamma} must lie in [0, 1)")));
        }
        if !(tol > 0.0) {
            return Err(Error::InvalidConfig(format!("tolerance {tol} must be positive")));
        }
        let rewards: Vec<f64> = State::all().map(&reward_fn).collect();
        let mut q = QTable::zeros();
        let mut deltas = Vec::new();
        for _ in 0..MAX_SWEEPS {
            let v: Vec<f64> = (0..NUM_STATES).map(|i| q.max_value(i)).collect();
            let mut next = QTable::zeros();
            let mut delta: f64 = 0.0;
            for s in 0..NUM_STATES {
                for a in 0..NUM_ACTIONS {
                    let dist = &self.table[s * NUM_ACTIONS + a];
                    let value: f64 = dist
                        .iter()
                        .enumerate()
                        .map(|(n, p)| p * (rewards[n] + gamma * v[n]))
                        .sum();
                    delta = delta.max((value - q.values[s][a]).abs());
                    next.values[s][a] = value;
                }
            }
            q = next;
            deltas.push(delta);
            if delta < tol {
                return Ok((q, deltas));
            }
        }
        Err(Error::NotConverged(MAX_SWEEPS))
    }
}

/// Tabular Q-function over the 18 x 9 state-action grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub values: [[f64; NUM_ACTIONS]; NUM_STATES],
}

impl QTable {
    pub fn zeros() -> Self {
        QTable {
            values: [[0.0; NUM_ACTIONS]; NUM_STATES],
        }
    }

    pub fn q(&self, s: State, a: Action) -> f64 {
        self.values[s.index()][a.index()]
    }

    fn max_value(&self, s: usize) -> f64 {
        self.values[s].iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn value(&self, s: State) -> f64 {
        self.max_value(s.index())
    }

    /// Greedy action with ties broken by the lowest action index.
    pub fn greedy_action(&self, s: State) -> Action {
        Action::from_index(crate::algos::argmax(&self.values[s.index()])).unwrap()
    }

    pub fn greedy_policy(&self) -> Vec<Action> {
        State::all().map(|s| self.greedy_action(s)).collect()
    }

    /// Labeled 18 x 9 CSV matrix.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["state".to_string()];
        header.extend(Action::all().map(Action::label));
        w.write_record(&header)?;
        for s in State::all() {
            let mut rec = vec![s.label()];
            rec.extend(self.values[s.index()].iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
