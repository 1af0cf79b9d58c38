//! Experiment orchestration for the multilevel SPDE sampler: declarative
//! TOML configs, run directories with hashed manifests, and pass/fail
//! reports.

pub mod config;
pub mod error;
pub mod experiments;
pub mod manifest;
pub mod report;

pub use config::{ExperimentConfig, ExperimentKind};
pub use error::{LabError, Result};
pub use experiments::{output_dir, run};
pub use manifest::RunManifest;
pub use report::{Check, Report};
