use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or image extents that do not fit together.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Format(#[from] FormatError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Problems decoding an image or weight file.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("unsupported image format{}", .0.as_deref().map(|s| format!(": {s}")).unwrap_or_default())]
    Unsupported(Option<String>),

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("bad magic bytes: {0}")]
    BadMagic(String),

    #[error("malformed data: {0}")]
    Malformed(String),

    #[error("weight file does not match the model: {0}")]
    ShapeMismatch(String),

    #[error("weight file version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
}
