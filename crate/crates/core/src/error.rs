use thiserror::Error;

use crate::optim::SolverDiagnostics;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("estimation failed for probe {probe:?}: {reason}")]
    Estimation { probe: Option<usize>, reason: String },

    #[error("solver did not converge: {reason}")]
    Solver {
        reason: String,
        diagnostics: Box<SolverDiagnostics>,
        best_iterate: Vec<f64>,
    },

    #[error("problem too large: {0}")]
    Capacity(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn dim(context: &'static str, expected: usize, found: usize) -> Self {
        Error::Dimension {
            context,
            expected,
            found,
        }
    }
}
