//! Configuration, scenario orchestration and file formats for the
//! `flowbeam` command line.
//!
//! Exit codes: 0 success, 2 configuration, 3 solver failure, 4 failed
//! assertion.

pub mod config;
pub mod error;
pub mod output;
pub mod scenario;

pub use config::{parse_config, SimConfig};
pub use error::{CliError, ConfigError};
pub use scenario::{run_scenario, RunOutcome, Scenario};
