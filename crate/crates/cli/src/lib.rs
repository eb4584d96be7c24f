//! Command-line front end for `crobust`: JSON configuration, CSV data, JSON or CSV reports.

pub mod config;
pub mod data;
pub mod error;
pub mod report;

pub use config::{parse_config, serialize_config, RunConfig};
pub use error::{CliError, CliResult, ErrorKind};
pub use report::{run, Command, RunOptions};
