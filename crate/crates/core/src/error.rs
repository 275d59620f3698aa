use thiserror::Error;

use crate::picard::IterationTrace;

/// Errors raised by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid profile: {0}")]
    InvalidProfile(String),

    #[error("positivity violation: f0 = {value:e} < 0 at x = {x}, v = {v}")]
    PositivityViolation { x: f64, v: f64, value: f64 },

    #[error("query out of range: {0}")]
    OutOfRange(String),

    #[error("characteristic integration failed: {0}")]
    IntegrationFailure(String),

    #[error("Picard iteration did not converge after {} iterations (last distance {:e})",
        .trace.iterations, .trace.distances.last().copied().unwrap_or(f64::NAN))]
    NonConvergence { trace: Box<IterationTrace> },

    #[error("continuation refused: triple norm {norm:e} exceeds cap {cap:e}")]
    ContinuationRefused { norm: f64, cap: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid comparison: {0}")]
    InvalidComparison(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
