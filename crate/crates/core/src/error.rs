//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite loss value {value} at projection offset s = {s}")]
    NonFiniteLoss { s: f64, value: f64 },

    #[error("client {client} diverged (non-finite parameters) in round {round}")]
    Divergence { client: usize, round: usize },

    #[error("aggregated model became non-finite in round {round}")]
    ServerDivergence { round: usize },

    #[error("cannot aggregate an empty set of client updates")]
    EmptyAggregation,

    #[error("cannot split {rows} rows across {clients} clients")]
    TooManyClients { clients: usize, rows: usize },

    #[error("{path}: bad IDX magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("{path}: truncated IDX file, need {expected} bytes but found {actual}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("image file holds {images} items but label file holds {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("{path}: label byte {value} at item {index} is not a digit class")]
    BadLabel {
        path: PathBuf,
        index: usize,
        value: u8,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to build worker thread pool: {0}")]
    ThreadPool(String),
}

impl Error {
    pub(crate) fn dims(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            actual,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
