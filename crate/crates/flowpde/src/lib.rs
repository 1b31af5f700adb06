//! Files, experiments and the command line around `flowpde-core`.

pub mod battery;
pub mod cli;
pub mod config;
pub mod error;
pub mod harness;
pub mod io;

pub use error::{CliError, CliResult, ErrorKind};
