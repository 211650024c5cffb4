//! Mobile jamming games on a line.
//!
//! A receiver and a jammer move along `[L, M]` on a half-line whose origin hosts
//! an access point. The crate covers the one-shot game (closed-form and numerical
//! equilibria), three dynamic Markov-game variants, tabular and dueling deep
//! Q-learning agents, scripted jammers, exact game-theoretic oracles, and an
//! experiment harness producing CSV/JSON artifacts.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub mod agents;
pub mod channel;
pub mod deep;
pub mod env;
pub mod error;
pub mod harness;
pub mod kv;
pub mod oracle;
pub mod rng;
pub mod static_game;

pub use error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Player {
    Receiver,
    Jammer,
}

impl Player {
    pub fn opponent(self) -> Player {
        match self {
            Player::Receiver => Player::Jammer,
            Player::Jammer => Player::Receiver,
        }
    }
}

impl fmt::Display for Player {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Player::Receiver => "receiver",
            Player::Jammer => "jammer",
        })
    }
}

impl FromStr for Player {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "r" | "receiver" => Ok(Player::Receiver),
            "j" | "jammer" => Ok(Player::Jammer),
            other => Err(Error::InvalidConfig(format!("unknown player `{other}`"))),
        }
    }
}
