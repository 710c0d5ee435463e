use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ident::{ms, SimTime};

/// Serde adapter storing a [`SimTime`] as fractional milliseconds.
pub mod millis {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::model::ident::{ms, to_ms, SimTime};

    pub fn serialize<S: Serializer>(t: &SimTime, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(to_ms(*t))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<SimTime, D::Error> {
        let v = f64::deserialize(d)?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(serde::de::Error::custom("duration must be a non-negative number of ms"));
        }
        Ok(ms(v))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ConflictMode {
    #[default]
    NonConflicting,
    UnknownRw,
    KnownRw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Timers {
    #[serde(rename = "client_ms", with = "millis")]
    pub client: SimTime,
    #[serde(rename = "node_ms", with = "millis")]
    pub node: SimTime,
    #[serde(rename = "retransmit_ms", with = "millis")]
    pub retransmit: SimTime,
    #[serde(rename = "view_change_ms", with = "millis")]
    pub view_change: SimTime,
    /// Base of the verifier abort timer; the request's compute cost is added.
    #[serde(rename = "verifier_abort_ms", with = "millis")]
    pub verifier_abort: SimTime,
}

impl Default for Timers {
    fn default() -> Self {
        Self {
            client: ms(400.0),
            node: ms(250.0),
            retransmit: ms(150.0),
            view_change: ms(300.0),
            verifier_abort: ms(120.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel {
    pub spawn_cents: f64,
    pub node_cents_per_sec: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self { spawn_cents: 0.0002, node_cents_per_sec: 0.0011 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub n_r: usize,
    pub f_r: usize,
    pub n_e: usize,
    pub f_e: usize,
    pub timers: Timers,
    pub batch_size: usize,
    #[serde(rename = "batch_timeout_ms", with = "millis")]
    pub batch_timeout: SimTime,
    pub checkpoint_interval: u64,
    pub conflict_mode: ConflictMode,
    pub decentralized_spawning: bool,
    /// Size decentralized spawning for the case where honest nodes are in the dark.
    pub dark_pessimism: bool,
    pub cost: CostModel,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            n_r: 4,
            f_r: 1,
            n_e: 3,
            f_e: 1,
            timers: Timers::default(),
            batch_size: 10,
            batch_timeout: ms(2.0),
            checkpoint_interval: 16,
            conflict_mode: ConflictMode::NonConflicting,
            decentralized_spawning: false,
            dark_pessimism: false,
            cost: CostModel::default(),
        }
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("n_r = {n_r} is below 3*f_r+1 = {need}")]
    TooFewNodes { n_r: usize, need: usize },
    #[error("n_e = {n_e} is below {need} required by {mode:?}")]
    TooFewExecutors { n_e: usize, need: usize, mode: ConflictMode },
    #[error("{0} must be positive")]
    NonPositive(&'static str),
}

impl Config {
    pub fn with_nodes(n_r: usize) -> Self {
        Self { n_r, f_r: (n_r.saturating_sub(1)) / 3, ..Self::default() }
    }

    pub fn quorum(&self) -> usize {
        2 * self.f_r + 1
    }

    pub fn weak_quorum(&self) -> usize {
        self.f_r + 1
    }

    pub fn primary_of(&self, view: u64) -> u32 {
        (view % self.n_r as u64) as u32
    }

    pub fn min_executors(&self) -> usize {
        match self.conflict_mode {
            ConflictMode::UnknownRw => 3 * self.f_e + 1,
            _ => 2 * self.f_e + 1,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_r < 3 * self.f_r + 1 {
            return Err(ConfigError::TooFewNodes { n_r: self.n_r, need: 3 * self.f_r + 1 });
        }
        let need = self.min_executors();
        if self.n_e < need {
            return Err(ConfigError::TooFewExecutors {
                n_e: self.n_e,
                need,
                mode: self.conflict_mode,
            });
        }
        if self.batch_size == 0 {
            return Err(ConfigError::NonPositive("batch_size"));
        }
        if self.checkpoint_interval == 0 {
            return Err(ConfigError::NonPositive("checkpoint_interval"));
        }
        Ok(())
    }
}
