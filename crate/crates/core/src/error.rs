use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("matrix is not symmetric: max |A - A^T| = {max_asymmetry:e}")]
    NotSymmetric { max_asymmetry: f64 },

    #[error("matrix is not positive definite: pivot {pivot} = {value:e}")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("empty batch passed to {0}")]
    EmptyBatch(&'static str),

    #[error("invalid kernel specification: {0}")]
    InvalidKernel(String),

    #[error("invalid probability input: {0}")]
    InvalidProbabilities(String),

    #[error("backward without forward: {0}")]
    BackwardWithoutForward(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("bad IDX magic {found:#010x} at offset 0 (expected {expected:#010x})")]
    BadMagic { expected: u32, found: u32 },

    #[error("truncated IDX payload at offset {offset}: need {needed} bytes, have {available}")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },

    #[error("image/label count mismatch: {images} images vs {labels} labels (label count at offset 4)")]
    CountMismatch { images: usize, labels: usize },

    #[error("checkpoint parse error at byte {offset}: {reason}")]
    Checkpoint { offset: usize, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
