//! Experiment execution, policy comparison, persistence, and verification.

pub mod compare;
pub mod config;
pub mod metrics;
pub mod oracle;
pub mod report;
pub mod run;
pub mod snapshot;
pub mod verify;

pub use compare::{compare, CellSummary, CompareOptions, Comparison};
pub use config::{RunConfig, ScenarioConfig};
pub use metrics::{recall_at_capacity, redundancy};
pub use report::{canonical_json, REPORT_SIGNIFICANT_DIGITS};
pub use run::{run_stream, Experiment, RunReport, REPORT_FORMAT_VERSION};
pub use snapshot::{snapshot_from_str, snapshot_load, snapshot_save, snapshot_to_string, SNAPSHOT_FORMAT_VERSION};
pub use verify::{verify, verify_config, Divergence, SeedSummary, VerifyOptions, VerifyReport};
