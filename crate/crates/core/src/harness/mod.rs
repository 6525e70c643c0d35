//! Experiment configuration, orchestration, evaluation, sweeps and result
//! files.

pub mod config;
pub mod emit;
pub mod experiment;
pub mod metrics;
pub mod sweep;

use std::path::PathBuf;

use thiserror::Error;

use crate::data::DataError;
use crate::federation::FedError;
use crate::nn::NnError;

pub use config::{ConfigError, DataSource, ExperimentConfig, ModelConfig, TrainingConfig};
pub use emit::{emit_results, emit_table, JsonlRecord, TableRow};
pub use experiment::{run_experiment, run_experiment_with, setup_experiment, ExperimentResult, Setup};
pub use metrics::{evaluate, rounds_to_threshold, MetricsRecord, Phase};
pub use sweep::{run_ablation, run_sweep, SweepAxis, SweepSpec};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("cannot parse config: {0}")]
    ConfigParse(String),
    #[error("invalid config: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("client {client}: {source}")]
    ClientData { client: usize, source: DataError },
    #[error("pretrained model does not match the configured architecture")]
    PretrainedArchitecture,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Fed(#[from] FedError),
    #[error("table rows have different client counts")]
    TableShape,
    #[error("sweep: {0}")]
    Sweep(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Json { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
}
