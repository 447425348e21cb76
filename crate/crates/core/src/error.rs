//! Crate-wide error type with a stable machine-parsable category per variant.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor/parameter dimension mismatch.
    #[error("shape: {0}")]
    Shape(String),
    /// Math domain violation (log of non-positive, division by zero, non-finite value).
    #[error("domain: {0}")]
    Domain(String),
    /// A caller broke an operation's contract (non-scalar backward root, empty batch, ...).
    #[error("contract: {0}")]
    Contract(String),
    /// Invalid configuration; the message lists every violated field.
    #[error("config: {0}")]
    Config(String),
    /// Dataset-level problem (empty after ingestion, too short to window, ...).
    #[error("data: {0}")]
    Data(String),
    /// CSV schema mismatch; names the missing columns.
    #[error("schema: missing column(s) {0}")]
    Schema(String),
    /// Malformed evaluation input (interval with lo > hi, zero total scale, ...).
    #[error("input: {0}")]
    Input(String),
    /// Training diverged or hit a non-finite gradient.
    #[error("train: member {member} epoch {epoch}: {msg}")]
    Train {
        member: usize,
        epoch: usize,
        msg: String,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short category token used as the CLI error prefix.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Domain(_) => "domain",
            Error::Contract(_) => "contract",
            Error::Config(_) => "config",
            Error::Data(_) => "data",
            Error::Schema(_) => "schema",
            Error::Input(_) => "input",
            Error::Train { .. } => "train",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
