use std::path::Path;

/// Failure classes with stable process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("artifact mismatch: {0}")]
    Artifact(String),
    #[error("integrity error: {0}")]
    Integrity(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Artifact(_) => 4,
            CliError::Integrity(_) => 5,
        }
    }

    pub fn config(e: impl std::fmt::Display) -> Self {
        CliError::Config(e.to_string())
    }

    pub fn data(e: impl std::fmt::Display) -> Self {
        CliError::Data(e.to_string())
    }

    pub fn artifact(e: impl std::fmt::Display) -> Self {
        CliError::Artifact(e.to_string())
    }

    pub fn integrity(e: impl std::fmt::Display) -> Self {
        CliError::Integrity(e.to_string())
    }

    /// Failure to write under the output directory.
    pub fn output(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Config(format!("cannot write {}: {e}", path.display()))
    }
}

pub type CliResult<T> = Result<T, CliError>;
