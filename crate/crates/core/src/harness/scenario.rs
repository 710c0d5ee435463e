//! Scenario files: everything a run depends on.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{AdversaryError, AdversarySpec};
use crate::model::config::millis;
use crate::model::{ms, Config, ConfigError, SimTime};
use crate::simnet::{NetworkPolicy, PolicyError};
use crate::workload::{WorkloadError, WorkloadSpec};

use super::processing::ProcessingModel;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    ServerlessBft,
    /// One node batches and spawns with no agreement.
    NoShim,
    /// Leader-based crash-tolerant agreement among `2f_R+1` nodes.
    ServerlessCft,
    /// Shim nodes execute locally and reply to clients.
    PbftOnShim,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::ServerlessBft, Mode::NoShim, Mode::ServerlessCft, Mode::PbftOnShim];

    pub fn label(self) -> &'static str {
        match self {
            Mode::ServerlessBft => "serverless-bft",
            Mode::NoShim => "no-shim",
            Mode::ServerlessCft => "serverless-cft",
            Mode::PbftOnShim => "pbft-on-shim",
        }
    }
}

/// Region assignment for every component. Executors take regions by spawn
/// slot, cycling through the list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Placement {
    pub node_regions: Vec<u32>,
    pub client_region: u32,
    pub verifier_region: u32,
    pub storage_region: u32,
    pub executor_regions: Vec<u32>,
}

impl Default for Placement {
    fn default() -> Self {
        Self {
            node_regions: Vec::new(),
            client_region: 0,
            verifier_region: 0,
            storage_region: 0,
            executor_regions: vec![0],
        }
    }
}

impl Placement {
    pub fn node_region(&self, node: u32) -> u32 {
        self.node_regions.get(node as usize).copied().unwrap_or(0)
    }

    pub fn executor_region(&self, slot: u32) -> u32 {
        if self.executor_regions.is_empty() {
            0
        } else {
            self.executor_regions[slot as usize % self.executor_regions.len()]
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub mode: Mode,
    pub config: Config,
    pub network: NetworkPolicy,
    pub workload: WorkloadSpec,
    pub adversary: AdversarySpec,
    pub processing: ProcessingModel,
    pub placement: Placement,
    #[serde(rename = "duration_ms", with = "millis")]
    pub duration: SimTime,
    #[serde(rename = "warmup_ms", with = "millis")]
    pub warmup: SimTime,
    /// Once every client has finished, keep running this long so
    /// checkpoints and notifications settle.
    #[serde(rename = "settle_ms", with = "millis")]
    pub settle: SimTime,
    /// Keep every trace record in memory, not only the running digest.
    pub retain_trace: bool,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: String::new(),
            seed: 1,
            mode: Mode::default(),
            config: Config::default(),
            network: NetworkPolicy::default(),
            workload: WorkloadSpec::default(),
            adversary: AdversarySpec::default(),
            processing: ProcessingModel::default(),
            placement: Placement::default(),
            duration: ms(1000.0),
            warmup: ms(100.0),
            settle: ms(100.0),
            retain_trace: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("network: {0}")]
    Network(#[from] PolicyError),
    #[error("workload: {0}")]
    Workload(#[from] WorkloadError),
    #[error("adversary: {0}")]
    Adversary(#[from] AdversaryError),
    #[error("warmup {warmup_ms} ms is not shorter than duration {duration_ms} ms")]
    Warmup { warmup_ms: f64, duration_ms: f64 },
    #[error("adversaries are only modelled for serverless-bft runs")]
    AdversaryInBaseline,
    #[error("parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Scenario {
    pub fn from_toml_str(s: &str) -> Result<Self, ScenarioError> {
        Ok(toml::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenarios always serialize")
    }

    /// Checks quorum arithmetic and fault bounds. An out-of-model adversary
    /// also lifts the executor minimum.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        match self.config.validate() {
            Err(ConfigError::TooFewExecutors { .. }) if self.adversary.out_of_model => {}
            other => other?,
        }
        self.network.validate()?;
        self.workload.validate()?;
        self.adversary.validate(&self.config)?;
        if self.mode != Mode::ServerlessBft
            && (!self.adversary.nodes.is_empty() || !self.adversary.executors.is_empty())
        {
            return Err(ScenarioError::AdversaryInBaseline);
        }
        if self.warmup >= self.duration {
            return Err(ScenarioError::Warmup {
                warmup_ms: crate::model::to_ms(self.warmup),
                duration_ms: crate::model::to_ms(self.duration),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let s = Scenario::default();
        let back = Scenario::from_toml_str(&s.to_toml_string()).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(Scenario::from_toml_str("bogus = 1").is_err());
        assert!(Scenario::from_toml_str("[config]\nn_rr = 4").is_err());
    }

    #[test]
    fn validation_reports_quorum_arithmetic() {
        let mut s = Scenario::default();
        s.config.n_r = 3;
        let err = s.validate().unwrap_err().to_string();
        assert!(err.contains("3*f_r+1"), "{err}");
    }
}
