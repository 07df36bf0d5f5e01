use std::path::Path;

/// Failures of a command, split by exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Invalid configuration or arguments (exit status 2).
    #[error("config error: {0}")]
    Config(String),
    /// Anything that goes wrong while running a valid configuration (exit status 3).
    #[error("error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }
}

impl From<tpgf_core::Error> for CliError {
    fn from(e: tpgf_core::Error) -> Self {
        match e {
            tpgf_core::Error::Config(m) => CliError::Config(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}
