//! Command-line front end and annotation service for `gesture-forge`.

pub mod commands;
pub mod error;
pub mod serve;

pub use commands::{run, Cli, Command};
pub use error::{CliError, FailureKind};
