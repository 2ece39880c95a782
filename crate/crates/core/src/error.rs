use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("mask has no set pixels")]
    EmptyMask,

    #[error("degenerate box ({x_min}, {y_min}, {x_max}, {y_max})")]
    DegenerateBox {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("image not found: {0}")]
    MissingImage(PathBuf),

    #[error("record {image_id}: {message}")]
    TierViolation { image_id: String, message: String },

    #[error("expected tier {expected}, found {found}")]
    WrongTier { expected: String, found: String },

    #[error("tier mismatch: {0}")]
    TierMismatch(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: u32 },

    #[error("model file {path}: {message}")]
    VersionMismatch { path: PathBuf, message: String },

    #[error("image sets overlap: {0}")]
    DisjointnessViolation(String),

    #[error("{count} instances exceed the exhaustive-matching cap of {cap}")]
    TooLarge { count: usize, cap: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

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
