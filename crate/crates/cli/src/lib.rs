//! Batch runner: configuration, resumable runs, evaluation and reports.

pub mod config;
pub mod error;
pub mod evaluate;
pub mod fsio;
pub mod ingest;
pub mod manifest;
pub mod pipeline;
pub mod report;

pub use config::{BackendKind, Purpose, RunConfig};
pub use error::CliError;
pub use evaluate::{evaluate, evaluate_with};
pub use manifest::{RunManifest, Status};
pub use pipeline::{run, run_with, FinalRecord, Provider, RankedEntry, RankingRecord, RunOutcome};
pub use report::{report, ReportFormat};
