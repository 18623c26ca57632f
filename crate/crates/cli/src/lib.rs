//! Configuration, orchestration and export for the `robust-contract` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod export;
pub mod manifest;

pub use commands::{execute, Command, Run};
pub use config::RunConfig;
pub use error::CliError;

/// Environment variable that overrides the configured output directory.
pub const OUT_DIR_ENV: &str = "RCONTRACT_OUT_DIR";
