use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid forward cache: {0}")]
    InvalidCache(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("empty data: {0}")]
    EmptyData(String),

    #[error("schema mismatch: expected fingerprint {expected:016x}, found {found:016x}")]
    SchemaMismatch { expected: u64, found: u64 },

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("label-rate calibration failed: {0}")]
    Calibration(String),

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("unsupported checkpoint format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("{0}")]
    Experiment(String),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
