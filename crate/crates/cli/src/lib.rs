//! Command-line orchestration for framebench: subcommands over the event,
//! sample, dataset and model file formats, a flat run config, and SVG plots.

pub mod commands;
pub mod config;
pub mod plot;

pub use commands::{Overrides, UsageError};
pub use config::RunConfig;
