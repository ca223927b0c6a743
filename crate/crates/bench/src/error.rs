use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("{path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] paramcorrupt::Error),
}

pub type Result<T> = std::result::Result<T, BenchError>;

impl BenchError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        BenchError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 config, 3 data, 4 numerical divergence.
    pub fn exit_code(&self) -> i32 {
        use paramcorrupt::Error as E;
        match self {
            BenchError::Config(_) => 2,
            BenchError::Data(_) | BenchError::Checkpoint { .. } | BenchError::Io { .. } => 3,
            BenchError::Core(E::Diverged { .. } | E::Numerical(_)) => 4,
            BenchError::Core(E::DimensionMismatch { .. }) => 3,
            BenchError::Core(_) => 2,
        }
    }
}
