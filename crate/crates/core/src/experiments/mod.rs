//! Scenario files, sweep runners, result tables and the command-line interface.

pub mod cli;
pub mod config;
pub mod output;
pub mod runners;

pub use config::ScenarioFile;
pub use output::{Metadata, SweepResult};
