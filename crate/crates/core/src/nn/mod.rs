//! A small feed-forward Q-network stack: dense layers with optional batch
//! normalization, ReLU/Tanh, inverted dropout, a Q head and an optional
//! generative (behavior-cloning) head, Adam, hard target synchronization and
//! a central-difference gradient checker.

mod adam;
mod gradcheck;
mod model;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::NUM_ACTIONS;

pub use adam::{Adam, BETA1, BETA2, EPSILON as ADAM_EPSILON};
pub use gradcheck::{finite_diff_check, finite_diff_pairs, finite_diff_report, FiniteDiffReport, Objective};
pub use model::{ForwardMode, Net, Outputs, QModel, Tape, BN_EPSILON, BN_MOMENTUM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the input `x` and output `y = f(x)`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::UnknownToken {
                kind: "Activation",
                token: other.to_string(),
            }),
        }
    }
}

/// Shape and regularization of a Q-network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub activation: Activation,
    pub dropout_rate: f64,
    pub batch_norm: bool,
    /// Adds a 9-way generative head next to the Q head.
    pub gen_head: bool,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec {
            input_dim: 8,
            hidden_layers: 2,
            hidden_units: 16,
            activation: Activation::Relu,
            dropout_rate: 0.1,
            batch_norm: true,
            gen_head: false,
        }
    }
}

impl NetworkSpec {
    pub fn output_dim(&self) -> usize {
        NUM_ACTIONS
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_layers == 0 || self.hidden_units == 0 {
            return Err(Error::InvalidConfig(
                "network dimensions must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}
