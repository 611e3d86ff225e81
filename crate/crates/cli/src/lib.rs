//! Configuration parsing and subcommand pipelines behind the `ergodiff` binary.

pub mod config;
pub mod pipeline;

pub use config::{parse_config, parse_config_file, ConfigError, RunConfig};
