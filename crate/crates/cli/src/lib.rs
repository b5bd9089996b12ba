//! Command-line companion to `milbeat-core`: run configuration, file
//! formats, and the pipeline commands. The library surface exists so
//! integration tests can drive commands in-process; `main` is a thin
//! argument-parsing shell over [`commands`].

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;

pub use config::RunConfig;
pub use error::CliError;
