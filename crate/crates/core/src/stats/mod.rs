//! Per-client activation statistics and closed-form 2-Wasserstein
//! distances between clients.

mod collect;
mod gaussian;
mod serial;
mod wasserstein;

use thiserror::Error;

use crate::nn::NnError;

pub use collect::{collect_bn_input_stats, collect_feature_stats, extract_bn_running_stats};
pub use gaussian::{ClientStats, LayerGaussian, StatsVariant};
pub use serial::{stats_from_text, stats_to_text};
pub use wasserstein::{client_distance, distance_matrix, w2_diag, w2_full, DistanceMatrix};

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("no samples to collect statistics from")]
    EmptyData,
    #[error("model has no batch-norm layers")]
    NoBnLayers,
    #[error("BN layer {0} has never seen a training batch")]
    UntrackedBn(usize),
    #[error("channel counts differ: {0} vs {1}")]
    ChannelMismatch(usize, usize),
    #[error("client statistics are not comparable: {0}")]
    Incongruent(String),
    #[error("covariance is not symmetric")]
    NotSymmetric,
    #[error("covariance is not positive semi-definite (eigenvalue {0})")]
    NotPsd(f64),
    #[error("need at least two clients, got {0}")]
    TooFewClients(usize),
    #[error("invalid distance matrix: {0}")]
    InvalidDistances(String),
    #[error("malformed statistics record: {0}")]
    Parse(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}
