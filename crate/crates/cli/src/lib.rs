//! Command-line driver: simulation, reconstruction, evaluation, noise sweeps
//! and ablations, each leaving a manifest that reproduces the run.

pub mod args;
pub mod commands;
pub mod error;
pub mod manifest;
pub mod output;

pub use args::{Cli, Command};
pub use commands::run;
pub use error::{CliError, CliResult, ExitCode};
