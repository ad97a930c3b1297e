//! Batch driver for the collaborating-insurers solver: configuration,
//! subcommands and output files.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::Session;
pub use config::RunConfig;
