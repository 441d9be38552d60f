//! Crate error type.

use thiserror::Error;

/// Errors surfaced by the simulation and analysis layers.
///
/// Contract violations (bad dimensions, malformed schedules, unphysical
/// probabilities) are reported as errors rather than panics so callers can
/// reject bad configuration files cleanly.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed pulse schedule: {0}")]
    Schedule(String),

    #[error("state preparation / measurement failure: {0}")]
    Spam(String),

    #[error("numerical consistency check failed: {0}")]
    Numerics(String),

    #[error("circuit error: {0}")]
    Circuit(String),

    #[error("layout error: {0}")]
    Layout(String),

    #[error("sequence database error: {0}")]
    SequenceDb(String),

    #[error("synthesis error: {0}")]
    Synth(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("detector error model: {0}")]
    Dem(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
