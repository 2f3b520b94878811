//! Config-driven experiments over the `setkernel` library: validation,
//! factorization, Green-function and Monte Carlo runs with line-delimited
//! JSON reports.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

pub use commands::{run, Command, Outcome, RunOptions};
pub use config::{Experiment, Tolerances};
pub use error::{CliError, Result};
pub use report::{Record, Report, Status};
