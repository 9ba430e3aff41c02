//! Command surface for the LinK library: scan ingestion, synthetic scenes,
//! verification suites, benchmarks, ERF export and toy training.

pub mod bench;
pub mod config;
pub mod data;
pub mod erf;
mod error;
pub mod train;
pub mod verify;

pub use config::{Command, Precision, Profile, RunConfig};
pub use error::{CliError, Result};
