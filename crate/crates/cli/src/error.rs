//! CLI error type: core errors plus archive-specific failures. Every variant
//! maps to a stable category token for the `error[<category>]:` exit line.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] evpower_core::Error),
    /// Unreadable or corrupt model archive; message carries parser context.
    #[error("archive: {0}")]
    Archive(String),
    /// Archive format version not supported by this binary.
    #[error("version: {0}")]
    Version(String),
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.category(),
            CliError::Archive(_) => "archive",
            CliError::Version(_) => "version",
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
