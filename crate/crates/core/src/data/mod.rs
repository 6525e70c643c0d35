//! Datasets, label-skewed client partitioning, synthetic generators and
//! the on-disk dataset format.

mod dataset;
pub mod dirichlet;
mod io;
mod split;
pub mod synthetic;

use thiserror::Error;

pub use dataset::{ClientSplit, Dataset};
pub use dirichlet::{dirichlet_partition, dirichlet_partition_min, sample_dirichlet};
pub use io::{dataset_from_bytes, dataset_to_bytes, load_dataset, save_dataset};
pub use split::{split_train_test, TrainTestSplit};
pub use synthetic::{make_synthetic, FeatureShiftSpec, SyntheticSpec};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("inconsistent dataset shape: {0}")]
    Shape(String),
    #[error("label {label} at row {row} is not below num_classes {num_classes}")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        num_classes: usize,
    },
    #[error("malformed dataset header: {0}")]
    MalformedHeader(String),
    #[error("dataset payload truncated: expected {expected} bytes, found {got}")]
    Truncated { expected: usize, got: usize },
    #[error("dataset payload has {extra} unexpected trailing bytes")]
    TrailingBytes { extra: usize },
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error("need at least 2 clients, got {0}")]
    ClientCount(usize),
    #[error("Dirichlet concentration must be positive, got {0}")]
    Alpha(f64),
    #[error("{clients} clients but only {samples} samples")]
    TooFewSamples { clients: usize, samples: usize },
    #[error("train fraction must lie in (0, 1), got {0}")]
    Fraction(f64),
    #[error("split leaves an empty side (train {train}, test {test})")]
    EmptySplitSide { train: usize, test: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
