//! `ocp-lab`: data generation, training, diagnosis and sweeps over the core library.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod sweep;

pub use commands::{run, Cli, Command};
pub use error::{exit, CliError};
