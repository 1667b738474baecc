use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown keypoint category `{0}`")]
    UnknownCategory(String),

    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),

    #[error("not enough co-occurring samples to estimate beta for {connection} (found {found}, need 2)")]
    InsufficientSamples { connection: String, found: usize },

    #[error("scale must be positive, got {0}")]
    NonPositiveScale(f64),

    #[error("pose {0} has no dominant connection and cannot be encoded")]
    InvalidPose(usize),

    #[error("position ({x}, {y}) lies outside the {width}x{height} grid")]
    OutOfBounds { x: f64, y: f64, width: usize, height: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("innovation covariance is singular")]
    SingularInnovation,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("format error at line {line}: {msg}")]
    Format { line: usize, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
