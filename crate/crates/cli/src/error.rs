use std::path::Path;

use thiserror::Error;

use crate::config::ConfigError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    #[error(transparent)]
    Simulation(#[from] quasimeas::Error),

    /// Some sweep cells failed; their rows carry the reason.
    #[error("{0}")]
    Cells(String),

    /// A run finished but an asserted physical property did not hold.
    #[error("check failed: {0}")]
    Physics(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// 2 for failed physics assertions, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Physics(_) => 2,
            _ => 1,
        }
    }
}
