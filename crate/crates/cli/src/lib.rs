//! Command-line driver: config parsing, subcommands and CSV/text outputs.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{execute, run, Cli, Command, CommonArgs, Outcome};
pub use config::Config;
