//! Orchestration of the self-consuming chain, persistence and reports.

pub mod analyze;
pub mod blob;
pub mod config;
pub mod persist;
pub mod report;
pub mod run;
pub mod scenario;

pub use analyze::{analyze_run, analyze_set, ForensicSummary};
pub use blob::{read_blob, write_blob, BlobError, Tensor};
pub use config::{ChainConfig, LoraSettings, Scenario};
pub use report::{
    directional_checks, emit_report, load_report, parse_metrics_csv, DirectionalChecks,
};
pub use run::{run_chain, run_chain_with, ChainReport, IterationArtifact};
pub use scenario::{apply_scenario, mixed_indices};
