//! Experiment harness behind the `agent` binary: config loading, the
//! task × method grid, result tables and the data commands.

pub mod commands;
pub mod config;
pub mod error;
pub mod harness;
pub mod table;

pub use error::{CliError, Result};
