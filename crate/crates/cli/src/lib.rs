//! Reproducible experiment runner for the qnoise laboratory.

pub mod config;
pub mod experiments;
pub mod output;

pub use config::{parse_config, ConfigErrors, Kind, RunConfig};
pub use experiments::{run_experiment, Outcome, RunError};
pub use output::{execute, OutputRecord};

/// Exit codes.
pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
