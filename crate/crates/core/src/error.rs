use std::path::PathBuf;

use serde::Serialize;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("training diverged at iteration {}: {}", .0.iteration, .0.reason)]
    Divergence(Box<DivergenceDump>),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }

    pub fn ingestion(msg: impl Into<String>) -> Self {
        Self::Ingestion(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Self::Contract(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Contract(_) => 2,
            Self::Ingestion(_) | Self::Io { .. } => 3,
            Self::Divergence(_) => 4,
        }
    }
}

/// State captured when a loss turns non-finite.
#[derive(Debug, Clone, Serialize)]
pub struct DivergenceDump {
    pub iteration: usize,
    pub reason: String,
    pub losses: Vec<(String, f64)>,
    pub student_param_norms: Vec<(String, f64)>,
}
