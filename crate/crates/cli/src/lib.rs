//! Experiment runner for subjective divergence profiles.

pub mod config;
pub mod output;
pub mod presets;
pub mod run;

pub use config::{validate_config, ConfigError, ConfigIssue, ExperimentConfig};
pub use output::write_profile;
pub use run::{run_experiment, ProfilePoint, RunError};
