use std::path::PathBuf;

/// Errors produced across the label engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed binary or text data; `offset` is the byte offset of the problem.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("camera mismatch: masks belong to `{masks}`, camera is `{camera}`")]
    CameraMismatch { masks: String, camera: String },

    #[error("index {index} out of bounds for scan of {len} points")]
    IndexOutOfBounds { index: usize, len: usize },

    #[error("too many instances in one scan: {0} (limit 65535)")]
    InstanceOverflow(usize),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("png error: {0}")]
    Png(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
