//! Batch driver for the stylealign laboratory: run configuration, presets
//! and subcommand implementations.

pub mod commands;
pub mod config;

pub use config::RunConfig;
