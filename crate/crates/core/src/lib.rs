//! Offline reinforcement learning benchmark for an emotion-adaptive
//! game-playing robot.
//!
//! The crate covers the whole pipeline: a discrete MDP over the
//! participant's game status, facial emotion and arousal; a stochastic
//! simulator that generates uniform-random behavior datasets and an exact
//! value-iteration oracle; a small hand-written Q-network stack; the NFQ,
//! DQN, DDQN, BCQ and CQL losses; training and grid search with min-loss
//! epoch selection; and initial-state value evaluation with overestimation
//! filtering.

pub mod algos;
pub mod chart;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod eval;
mod floats;
pub mod mdp;
pub mod nn;
pub mod rng;
pub mod sim;
pub mod train;

pub use error::{Error, Result};
