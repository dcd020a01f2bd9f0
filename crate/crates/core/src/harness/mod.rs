//! Batch front end: configuration, CSV ingestion, simulation, the fit,
//! oracle and metrics commands, and their output tables.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod metrics;
pub mod report;
pub mod simulate;

use thiserror::Error;

pub use commands::{
    build_model, fit_predict, oracle_predict, run_fit, run_metrics, run_oracle_predict, run_simulate, Dumps, FitOutcome,
};
pub use config::RunConfig;
pub use dataset::{ingest_csv, Dataset, Encoding, Schema};
pub use metrics::{compute_metrics, Metrics};
pub use simulate::{simulate, SimRow, Simulated};

/// Errors of the batch commands, grouped by process exit code.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Data(_) => 3,
            HarnessError::Numeric(_) => 4,
        }
    }
}
