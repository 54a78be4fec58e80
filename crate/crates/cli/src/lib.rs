//! Command-line driver: configuration files, run directories, manifests
//! and CSV output for meta-training, meta-testing and latent tracking.

pub mod commands;
pub mod config;
pub mod records;

pub use commands::{CliError, RunManifest};
pub use config::ExperimentConfig;
