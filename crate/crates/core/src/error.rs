//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape or dimensionality of an input does not match what the operation needs.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// An input failed validation before any work started.
    #[error("invalid input: {0}")]
    Validation(String),

    /// A binary file does not start with the expected magic or its header is garbled.
    #[error("corrupt header in {path}: {detail}")]
    CorruptHeader { path: String, detail: String },

    /// A binary file ends before the payload promised by its header.
    #[error("truncated payload in {path}: {detail}")]
    Truncated { path: String, detail: String },

    /// A binary file was written by an incompatible format version.
    #[error("unsupported format version {found} in {path} (expected {expected})")]
    VersionMismatch {
        path: String,
        found: u32,
        expected: u32,
    },

    /// Numeric failure mid-computation (non-finite loss, divergence, ...).
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A simplex enumeration would exceed the configured budget.
    #[error(
        "simplex count would exceed {limit} in dimension {dim}; \
         subsample the cloud (maxmin budget) or lower max_radius"
    )]
    SimplexOverflow { dim: usize, limit: usize },

    /// An experiment config is malformed (bad schema, dangling path, ...).
    #[error("config error: {0}")]
    Config(String),

    /// A pipeline stage failed mid-run; earlier stages' outputs are intact.
    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
