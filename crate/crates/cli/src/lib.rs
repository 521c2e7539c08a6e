//! Pipeline orchestration for value-consistent model soups.

pub mod benchmark;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod stages;

pub use config::PipelineConfig;
pub use error::{CliError, CliResult};
