//! Library surface of the `evpower` command-line tool, kept separate from
//! the binary so the subcommands and archive format are directly testable.

pub mod archive;
pub mod commands;
pub mod config;
pub mod error;

pub use error::{CliError, Result};
