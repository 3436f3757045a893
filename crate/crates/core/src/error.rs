use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad user input: invalid config values, malformed records, bad shapes.
    #[error("input error: {0}")]
    Input(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    Dimension {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("checksum mismatch for {file}: meta.json records {expected}, file hashes to {found}")]
    Checksum {
        file: String,
        expected: String,
        found: String,
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the CLI and the C API.
    ///
    /// 2 = input error, 3 = training divergence, 4 = I/O error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Divergence { .. } => 3,
            Error::Io { .. } => 4,
            _ => 2,
        }
    }
}
