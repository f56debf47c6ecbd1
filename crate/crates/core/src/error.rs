use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid dataset: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// Conjugate gradient met a direction of negative curvature.
    #[error("operator is not positive semidefinite (curvature {curvature:.3e})")]
    Indefinite { curvature: f64 },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
