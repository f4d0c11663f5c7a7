//! Scenario-driven command line front end for `trapwave`.

pub mod config;
pub mod error;
pub mod output;
pub mod pipeline;
pub mod plots;
pub mod scenarios;

pub use config::{validate, Scenario, ValidationReport};
pub use error::{CliError, CliResult};
