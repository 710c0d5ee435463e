//! Scenario runs, metrics, invariant monitors and baselines.

pub mod baseline;
pub mod metrics;
pub mod monitors;
pub mod oracle;
pub mod processing;
pub mod scenario;
pub mod sweep;
pub mod world;

pub use metrics::MetricsReport;
pub use monitors::Verdict;
pub use oracle::{serializability_oracle, Counterexample, DecidedRecord};
pub use processing::ProcessingModel;
pub use scenario::{Mode, Placement, Scenario, ScenarioError};
pub use sweep::{parse_values, sweep, to_csv, with_field};
pub use world::{run_scenario, NodeSummary, RunOutput, World};
