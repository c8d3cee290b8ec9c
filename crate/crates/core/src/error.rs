use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::corpus::CorpusError;
use crate::metrics::MetricsError;

/// Failures of the model, training and inference layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    /// Malformed arguments, e.g. an empty sequence or an out-of-range bin.
    #[error("invalid input: {0}")]
    Input(String),
    /// Inconsistent training data, e.g. plan and paragraph counts differ.
    #[error("data error: {0}")]
    Data(String),
    /// A loss or gradient stopped being finite.
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for ModelError {
    fn from(e: std::io::Error) -> Self {
        ModelError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, ModelError>;
