use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, SgError>;

#[derive(Debug, Error)]
pub enum SgError {
    #[error("invalid basis specification: {0}")]
    InvalidSpec(String),

    #[error("basis size {required} exceeds the configured cap of {cap}")]
    BasisTooLarge { required: usize, cap: usize },

    #[error("{what} out of range: {detail}")]
    OutOfRange { what: &'static str, detail: String },

    #[error("{tensor} tensor needs {required} stored entries, cap is {available}")]
    TensorCapExceeded {
        tensor: &'static str,
        required: usize,
        available: usize,
    },

    #[error("quadruple-product tensor was not built; use the pairwise (trip) flux mode")]
    QuadTensorUnavailable,

    /// The flux denominator matrix lost positive definiteness. Recoverable:
    /// the driver may retry with a smaller time step.
    #[error("denominator matrix not positive definite (smallest pivot {smallest_pivot:.3e}); hyperbolicity at risk")]
    NotPositiveDefinite { smallest_pivot: f64 },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("no sign change for root {index} in ({lo}, {hi})")]
    Bracketing { index: usize, lo: f64, hi: f64 },

    #[error("eigenvalue solver failed: {0}")]
    Eigen(String),

    #[error("assembled covariance operator is not symmetric (max asymmetry {max_asymmetry:.3e})")]
    CovarianceAsymmetric { max_asymmetry: f64 },

    #[error("covariance table: {0}")]
    Covariance(String),

    #[error("non-finite state at cell {cell}, mode {mode}")]
    NonFinite { cell: usize, mode: usize },

    #[error("{failed} of {total} Monte Carlo samples failed")]
    TooManySampleFailures { failed: usize, total: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl SgError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SgError::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors the time-stepping driver may recover from by shrinking the step.
    pub fn is_recoverable(&self) -> bool {
        matches!(self, SgError::NotPositiveDefinite { .. })
    }
}
