use std::path::PathBuf;

/// Errors raised by model construction, data handling and training.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid value: {0}")]
    Value(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("mode mismatch: expected {expected:?}, got {actual:?}")]
    Mode { expected: crate::types::DriveMode, actual: crate::types::DriveMode },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset `{dataset}` frame {index}: {reason}")]
    Frame { dataset: String, index: usize, reason: String },
    #[error("no latent code for frame {index} of `{dataset}`")]
    LatentMiss { dataset: String, index: usize },
    #[error("estimator validation error {error:.4} exceeds threshold {threshold:.4} (per-dimension errors {per_dim:?})")]
    EstimatorFit { error: f64, threshold: f64, per_dim: Vec<f64> },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl std::fmt::Display) -> Error {
        Error::Format { path: path.into(), reason: reason.to_string() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
