//! Configuration parsing and experiment subcommands for the `lans` binary.

pub mod config;
pub mod run;

pub use config::{parse_config, ConfigError, InitialCondition, SimConfig};
pub use run::{execute, Outcome, Subcommand};
