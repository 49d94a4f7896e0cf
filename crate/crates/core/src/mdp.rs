//! Discrete state and action spaces of the game-playing interaction, their
//! index encodings, network input encodings and the reward function.
//!
//! States factor into game status, the participant's facial emotion and
//! physiological arousal (3 x 3 x 2 = 18). Actions factor into the robot's
//! facial representation and a difficulty adjustment (3 x 3 = 9). All
//! orderings are fixed so serialized datasets stay portable.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub const NUM_STATES: usize = 18;
pub const NUM_ACTIONS: usize = 9;

macro_rules! token_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $token:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "lowercase")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn index(self) -> usize {
                self as usize
            }

            pub fn from_index(i: usize) -> Option<Self> {
                Self::ALL.get(i).copied()
            }

            pub fn token(self) -> &'static str {
                match self {
                    $($name::$variant => $token),+
                }
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self, Error> {
                match s {
                    $($token => Ok($name::$variant),)+
                    other => Err(Error::UnknownToken {
                        kind: stringify!($name),
                        token: other.to_string(),
                    }),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.token())
            }
        }
    };
}

token_enum!(
    /// Game status from the robot's perspective.
    GameStatus { Losing => "losing", Draw => "draw", Winning => "winning" }
);
token_enum!(
    /// Facial emotion shown by the participant, or facial expression
    /// displayed by the robot.
    Emotion { Angry => "angry", Happy => "happy", Neutral => "neutral" }
);
token_enum!(
    /// Physiological arousal (skin-conductance response activation).
    Arousal { Absent => "absent", Present => "present" }
);
token_enum!(
    /// How the robot adjusts the game difficulty.
    Difficulty { Constant => "constant", Decrease => "decrease", Increase => "increase" }
);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct State {
    pub gs: GameStatus,
    pub fe: Emotion,
    pub pa: Arousal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    /// Facial representation shown on the robot's display.
    pub fr: Emotion,
    pub da: Difficulty,
}

impl State {
    pub const fn new(gs: GameStatus, fe: Emotion, pa: Arousal) -> Self {
        Self { gs, fe, pa }
    }

    /// Lexicographic index `((gs * 3) + fe) * 2 + pa`.
    pub fn index(self) -> usize {
        (self.gs.index() * 3 + self.fe.index()) * 2 + self.pa.index()
    }

    pub fn from_index(i: usize) -> Option<Self> {
        if i >= NUM_STATES {
            return None;
        }
        Some(Self {
            gs: GameStatus::ALL[i / 6],
            fe: Emotion::ALL[(i / 2) % 3],
            pa: Arousal::ALL[i % 2],
        })
    }

    pub fn all() -> impl Iterator<Item = State> {
        (0..NUM_STATES).map(|i| State::from_index(i).unwrap())
    }

    pub fn label(self) -> String {
        format!("{}/{}/{}", self.gs, self.fe, self.pa)
    }
}

impl Action {
    pub const fn new(fr: Emotion, da: Difficulty) -> Self {
        Self { fr, da }
    }

    /// Lexicographic index `fr * 3 + da`.
    pub fn index(self) -> usize {
        self.fr.index() * 3 + self.da.index()
    }

    pub fn from_index(j: usize) -> Option<Self> {
        if j >= NUM_ACTIONS {
            return None;
        }
        Some(Self {
            fr: Emotion::ALL[j / 3],
            da: Difficulty::ALL[j % 3],
        })
    }

    pub fn all() -> impl Iterator<Item = Action> {
        (0..NUM_ACTIONS).map(|j| Action::from_index(j).unwrap())
    }

    pub fn label(self) -> String {
        format!("{}/{}", self.fr, self.da)
    }
}

pub fn state_index(s: State) -> usize {
    s.index()
}

pub fn action_index(a: Action) -> usize {
    a.index()
}

pub fn game_score(gs: GameStatus) -> f64 {
    match gs {
        GameStatus::Losing => 0.3,
        GameStatus::Draw => 0.0,
        GameStatus::Winning => -0.5,
    }
}

pub fn emotion_score(fe: Emotion) -> f64 {
    match fe {
        Emotion::Happy => 0.3,
        Emotion::Neutral => 0.0,
        Emotion::Angry => -0.2,
    }
}

pub fn arousal_score(pa: Arousal) -> f64 {
    match pa {
        Arousal::Present => 0.4,
        Arousal::Absent => -0.3,
    }
}

/// Reward of arriving in `next`. Always within [-1, 1].
pub fn reward(next: State) -> f64 {
    game_score(next.gs) + emotion_score(next.fe) + arousal_score(next.pa)
}

/// How a state is presented to the Q-network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationEncoding {
    /// One-hot per factor, concatenated: 3 + 3 + 2 = 8 dims.
    #[default]
    FactoredOnehot,
    /// One-hot over the 18 states.
    FullOnehot,
}

impl ObservationEncoding {
    pub fn dim(self) -> usize {
        match self {
            ObservationEncoding::FactoredOnehot => 8,
            ObservationEncoding::FullOnehot => NUM_STATES,
        }
    }

    /// Writes the encoding of `s` into `out`, which must have length `dim()`.
    pub fn write(self, s: State, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim());
        out.iter_mut().for_each(|v| *v = 0.0);
        match self {
            ObservationEncoding::FactoredOnehot => {
                out[s.gs.index()] = 1.0;
                out[3 + s.fe.index()] = 1.0;
                out[6 + s.pa.index()] = 1.0;
            }
            ObservationEncoding::FullOnehot => out[s.index()] = 1.0,
        }
    }
}

pub fn encode_observation(s: State, enc: ObservationEncoding) -> Vec<f64> {
    let mut v = vec![0.0; enc.dim()];
    enc.write(s, &mut v);
    v
}
