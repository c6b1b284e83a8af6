use thiserror::Error;

/// Errors produced by estimation, simulation and evaluation routines.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller supplied an argument outside the accepted range.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An observation or grid point lies outside the kernel's domain.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    /// Some observation has zero likelihood under every grid point.
    #[error("observation {row} has zero density at every grid point (assumption A1 violated)")]
    ZeroLikelihoodRow { row: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Training produced a non-finite loss or gradient.
    #[error("training failed at iteration {iteration} (batch {batch}): {reason}")]
    Training {
        iteration: usize,
        batch: usize,
        reason: String,
    },

    /// Input data are degenerate for the requested procedure.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by the numbers themselves rather than by the shape
    /// or format of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_)
                | Error::Training { .. }
                | Error::ZeroLikelihoodRow { .. }
                | Error::Degenerate(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
