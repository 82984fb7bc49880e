use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("unsupported density specification: {0}")]
    UnsupportedSpec(String),

    #[error("run aborted: population {population} exceeded cap {cap} at time {time}")]
    PopulationCap {
        population: usize,
        cap: usize,
        time: f64,
    },

    #[error(
        "sampling failed after {attempts} attempts (expected acceptance rate {expected_rate:.3e})"
    )]
    SamplingFailure { attempts: u64, expected_rate: f64 },

    #[error("unusable regime: {0}")]
    UnusableRegime(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("outer radius too small: boundary value {boundary_value:.3e} exceeds tolerance {tolerance:.1e}")]
    DomainTooSmall { boundary_value: f64, tolerance: f64 },

    #[error("not converged: {0}")]
    NonConverged(String),

    #[error("inconsistent estimate: cross-probe spread {spread:.4} exceeds twice the error bar {error_bar:.4}")]
    InconsistentEstimate { spread: f64, error_bar: f64 },

    #[error("insufficient resolution: {0}")]
    Resolution(String),

    #[error("empty jump log")]
    EmptyLog,

    #[error("invalid input data in {path}: {reason}")]
    InvalidData { path: PathBuf, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn precondition(msg: impl Into<String>) -> Error {
    Error::Precondition(msg.into())
}
