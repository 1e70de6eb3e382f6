use std::path::PathBuf;

use thiserror::Error;

/// Coarse error class, used by front ends to choose an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numerical,
    Io,
}

#[derive(Debug, Error)]
pub enum SpdError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not symmetric: |m[{row}][{col}] - m[{col}][{row}]| = {gap:e}")]
    NotSymmetric { row: usize, col: usize, gap: f64 },

    #[error("matrix is not positive definite: smallest eigenvalue {min_eigenvalue:e}")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error(
        "symmetric eigensolver did not converge (n = {dim}, frobenius norm {frobenius:e}, \
         diagonal range [{diag_min:e}, {diag_max:e}])"
    )]
    NoConvergence {
        dim: usize,
        frobenius: f64,
        diag_min: f64,
        diag_max: f64,
    },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SpdError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            SpdError::Dimension(_)
            | SpdError::NotSymmetric { .. }
            | SpdError::InsufficientSamples { .. }
            | SpdError::Invalid(_)
            | SpdError::Parse { .. } => ErrorKind::Validation,
            SpdError::NotPositiveDefinite { .. }
            | SpdError::NoConvergence { .. }
            | SpdError::NonFinite(_) => ErrorKind::Numerical,
            SpdError::Io { .. } => ErrorKind::Io,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SpdError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        SpdError::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, SpdError>;
