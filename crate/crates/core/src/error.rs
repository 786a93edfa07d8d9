use std::path::PathBuf;

/// Errors produced anywhere in the probe pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corrupt {what}: {detail}")]
    Corrupt { what: String, detail: String },

    #[error("parse error in {what}: {detail}")]
    Parse { what: String, detail: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("task type mismatch: {left} vs {right}")]
    TaskMismatch { left: String, right: String },

    #[error("layer {layer} not stored (available: {available:?})")]
    LayerNotStored { layer: usize, available: Vec<usize> },

    #[error("AUROC undefined: labels contain a single class")]
    AurocUndefined,

    #[error("rank deficient: achieved rank {rank}, need {needed}")]
    RankDeficient { rank: usize, needed: usize },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: String, expected: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.into())
        } else {
            Error::Io {
                path: path.into(),
                source,
            }
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors caused by user data or arguments rather than the program.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Io { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
