//! Library side of the `defectnet` binary: run configuration and the
//! subcommands, each writing to caller-supplied streams.

pub mod commands;
pub mod config;

pub use commands::{CliError, CliResult};
pub use config::RunConfig;
