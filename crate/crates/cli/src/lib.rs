//! Command-line pipeline and HTTP service around `agentrec-core`.

pub mod commands;
pub mod config;
pub mod server;

pub use commands::{run, Cli, Command, EngineArgs};
pub use config::EngineConfig;
