use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient labels: class {0} has no training samples")]
    InsufficientLabels(usize),

    #[error("class index {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },

    #[error("measure {0} is not combinable with geometric uncertainty")]
    NotCombinable(&'static str),

    #[error("degenerate plane angles (phi={phi}, gamma={gamma})")]
    DegeneratePlane { phi: f64, gamma: f64 },

    #[error("empty pool")]
    EmptyPool,

    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),

    #[error("strategy {strategy} requires {requirement}")]
    UnsupportedStrategy {
        strategy: String,
        requirement: &'static str,
    },

    #[error("invalid supervoxel map: {0}")]
    InvalidMap(String),

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
