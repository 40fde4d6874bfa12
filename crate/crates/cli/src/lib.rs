//! Experiment orchestration behind the `modeldiff` command: configuration,
//! the resumable stage runner, and report tables.

pub mod config;
pub mod experiment;
pub mod report;

pub use config::{ConfigError, ExperimentConfig};
pub use experiment::{
    emit_report, report_run, run_data_variation, run_experiment, run_experiment_until, RunError, RunManifest, Stage,
};
