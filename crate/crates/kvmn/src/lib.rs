//! File formats, configuration and the command-line surface around
//! [`kvmn_core`].

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
mod error;

pub use error::{CliError, CliResult};
