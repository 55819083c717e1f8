//! Command-line runner and annotation service for clause answer evaluation.

pub mod config;
pub mod error;
pub mod runner;
pub mod service;

pub use config::{Overrides, ProviderConfig, ProviderMode, RecordSource, RunConfig};
pub use error::CliError;
