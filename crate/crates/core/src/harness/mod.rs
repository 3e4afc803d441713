//! Monte Carlo runner, constant calibration, CSV ingestion and reports.
//!
//! This is the only part of the crate that spawns parallel work. Trial `t`
//! draws from stream `t` of the master seed and per-trial records are merged
//! in trial order, so results do not depend on the thread count.

mod calibrate;
mod config;
mod experiment;
mod ingest;
mod report;

use thiserror::Error;

use crate::definetti::ProbeError;
use crate::dist::DistError;
use crate::families::FamilyError;
use crate::flattening::FlattenError;
use crate::oracles::OracleError;
use crate::sampling::SamplingError;
use crate::testers::TesterError;

pub use calibrate::{
    calibrate, default_references, CalibrationRequest, CalibrationResult, GridPoint, ReferenceCase, C1_GRID_MAX,
    C1_GRID_STEP,
};
pub use config::{
    default_c1, ExperimentConfig, FlatteningMode, OutputFormat, OutputSpec, TesterKind, DEFAULT_C1_CLOSENESS,
    DEFAULT_C1_IDENTITY, DEFAULT_C1_UNIFORMITY,
};
pub use experiment::{
    run_trials, run_trials_detailed, run_trials_on, ExperimentResult, FlatteningSummary, SampleSummary, TrialRecord,
    MARKOV_FACTOR,
};
pub use ingest::{ingest_samples, parse_counts, parse_samples, IngestFormat, Ingested, SampleTable};
pub use report::{
    config_hash, emit_report, metric_rows, parse_json_report, run_sweep, write_csv, write_output, write_sweep_csv,
    Report, SweepGrid, SweepRow,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("incompatible configuration: {0}")]
    IncompatibleConfig(String),
    #[error("calibration failed: {0}")]
    CalibrationFailed(String),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: value {value} is outside [1, {n}]")]
    IndexOutOfDomain { line: u64, value: u64, n: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    JsonFile {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Family(#[from] FamilyError),
    #[error(transparent)]
    Tester(#[from] TesterError),
    #[error(transparent)]
    Flatten(#[from] FlattenError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
}

impl HarnessError {
    /// Process exit status: 1 for configuration errors, 2 for calibration
    /// failure, 3 for IO.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::CalibrationFailed(_) => 2,
            HarnessError::Io { .. } => 3,
            _ => 1,
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }
}
