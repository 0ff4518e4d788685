//! Declarative experiment runner for moment-reduced agent systems.
//!
//! A TOML config describes the agent dynamics, kernel bases, fits and
//! post-processing; [`pipeline::run`] executes the requested stages and writes
//! CSV/JSON artifacts plus a manifest.

pub mod config;
pub mod dominance;
pub mod manifest;
pub mod metrics;
pub mod pipeline;
pub mod presets;

pub use config::{parse_config, ConfigError, ExperimentConfig};
pub use manifest::RunManifest;
pub use pipeline::{run, RunError, Stage};
