//! Deterministic federated-learning simulator with similarity-weighted,
//! batch-norm-preserving personalized aggregation.

pub mod data;
pub mod federation;
pub mod harness;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod stats;

pub use scalar::Scalar;

pub type Tensor64 = nn::Tensor<f64>;
pub type Tensor32 = nn::Tensor<f32>;
pub type Model64 = nn::Model<f64>;
pub type Model32 = nn::Model<f32>;
pub type Dataset64 = data::Dataset<f64>;
pub type Dataset32 = data::Dataset<f32>;
