use thiserror::Error;

/// Errors raised by the numerical routines in this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot:e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("matrix is not symmetric: |m[{i}][{j}] - m[{j}][{i}]| = {gap:e}")]
    NotSymmetric { i: usize, j: usize, gap: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("B^T B is singular (smallest eigenvalue {min_eigenvalue:e})")]
    SingularDrift { min_eigenvalue: f64 },

    #[error("closed form requested but B^T B and the noise covariance do not commute")]
    NonCommuting,

    #[error("covariance evaluation failed: {0}")]
    CovarianceEvaluationFailed(String),

    #[error("batch size {batch} exceeds dataset size {dataset}")]
    BatchLargerThanDataset { batch: usize, dataset: usize },

    #[error("per-example gradients do not sum to the full gradient (gap {gap:e})")]
    GradientMismatch { gap: f64 },

    #[error("a score function is required when the two covariances differ")]
    ScoreRequired,

    #[error("variance entry {index} is not positive ({value:e})")]
    NonPositiveVariance { index: usize, value: f64 },

    #[error("gradient gap is identically zero")]
    DegenerateGap,

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
