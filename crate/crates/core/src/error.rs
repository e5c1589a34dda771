use std::path::PathBuf;

/// Errors produced by the geometry, loss, refinement and I/O routines.
#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("invalid rotation axis: {0}")]
    InvalidAxis(String),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid depth map: {0}")]
    InvalidDepth(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    /// A loss has no usable pixels to be evaluated over.
    #[error("undefined loss: {0}")]
    UndefinedLoss(String),
    #[error("degenerate motion: {0}")]
    DegenerateMotion(String),
    #[error("degenerate alignment: {0}")]
    DegenerateAlignment(String),
    #[error("refinement could not start: {0}")]
    Initialization(String),
    #[error("no trajectory segments: {0}")]
    NoSegments(String),
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
