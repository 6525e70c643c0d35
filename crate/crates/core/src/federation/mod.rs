//! Client/server rounds: local training, BN-preserving aggregation with a
//! client-similarity matrix, and the baseline strategies.

mod params;
mod state;
mod strategy;
mod transport;
mod weights;

use thiserror::Error;

use crate::harness::metrics::EvalError;
use crate::nn::NnError;
use crate::stats::StatsError;

pub use params::{aggregate, average, layers_below, partition_params};
pub use state::{FederationState, TrainSettings};
pub use strategy::{Ablation, Strategy, DEFAULT_PROX_MU, DEFAULT_WARM_UP_ROUNDS};
pub use transport::{Envelope, Payload, Transport, Uplink};
pub use weights::{build_weight_matrix, WeightMatrix, MIN_DISTANCE};

#[derive(Debug, Error)]
pub enum FedError {
    #[error("invalid client count {0}")]
    ClientCount(usize),
    #[error("lambda must lie in (0, 1], got {0}")]
    Lambda(f64),
    #[error("invalid weight matrix: {0}")]
    InvalidWeights(String),
    #[error("client {0}'s parameters are not congruent with client 0's")]
    Incongruent(usize),
    #[error("weight matrix is {weights}x{weights} for {clients} clients")]
    WeightShape { weights: usize, clients: usize },
    #[error("{models} models but {splits} client splits")]
    SplitCount { models: usize, splits: usize },
    #[error("client {0}'s model differs in architecture from client 0's")]
    Architecture(usize),
    #[error("ablation switches apply only to weighted strategies, not `{0}`")]
    Ablation(&'static str),
    #[error("strategy `{0}` has no similarity weights")]
    NotWeighted(&'static str),
    #[error("personalization cut {0} must split the layer list")]
    Cut(usize),
    #[error("weighted aggregation requested before the weight matrix was computed")]
    MissingWeights,
    #[error("strategy needs a pretrained model for its statistics")]
    MissingPretrained,
    #[error("running-statistics similarity needs at least one warm-up round")]
    WarmUpRounds,
    #[error("transport: {0}")]
    Transport(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}
