use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value: {0}")]
    NonFiniteValue(String),
    #[error("unknown format version {0}")]
    UnknownVersion(u32),
    #[error("i/o failure: {0}")]
    IoFailure(#[from] io::Error),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("labels are required for evaluation: {0}")]
    MissingLabels(String),
    #[error("gradient tape already consumed")]
    TapeReused,
    #[error("class {0} has no labeled embeddings")]
    EmptyClass(i32),
    #[error("zero-length vector")]
    ZeroVector,
    #[error("label {label} outside the {classes} known classes")]
    LabelOutOfRange { label: i64, classes: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("negative reconstruction loss {0}")]
    NegativeLoss(f64),
    #[error("neighbor pool of {pool} is too small for {negatives} negatives")]
    PoolTooSmall { pool: usize, negatives: usize },
    #[error("insufficient clusters: {0}")]
    InsufficientClusters(String),
    #[error("bad cluster count: {0}")]
    BadK(String),
    #[error("inconsistent pins: {0}")]
    InconsistentPins(String),
    #[error("cost matrix is {rows}x{cols}, expected square")]
    NonSquare { rows: usize, cols: usize },
    #[error("empty K range [{0}, {1}]")]
    EmptyRange(usize, usize),
}

impl Error {
    /// Configuration problems, as opposed to problems with the data itself.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_) | Error::BadK(_) | Error::EmptyRange(..)
        )
    }

    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::MalformedHeader(_)
                | Error::ShapeMismatch(_)
                | Error::NonFiniteValue(_)
                | Error::UnknownVersion(_)
                | Error::MissingLabels(_)
                | Error::EmptyClass(_)
                | Error::EmptyBatch
                | Error::IoFailure(_)
        )
    }
}
