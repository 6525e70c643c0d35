//! Minimal neural-network engine: dense, 1-D convolution, batch
//! normalization, ReLU and flatten layers with hand-written backward
//! passes, softmax cross-entropy and SGD.

pub mod batchnorm;
mod checkpoint;
pub mod layer;
pub mod loss;
mod model;
pub mod optim;
mod params;
mod tensor;
mod train;

use thiserror::Error;

pub use batchnorm::BatchNormState;
pub use layer::LayerSpec;
pub use loss::cross_entropy;
pub use model::{validate_specs, BnConfig, ForwardOutput, Mode, Model, Tap};
pub use optim::{sgd_step, Sgd};
pub use params::{Gradients, ParamSet};
pub use tensor::Tensor;
pub use train::{train_local, LocalTrainConfig, ProximalTerm};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("tensor shape {shape:?} does not hold {len} values")]
    TensorShape { shape: Vec<usize>, len: usize },
    #[error("layer {layer} ({kind}) cannot take input of shape {input:?}")]
    LayerShape {
        layer: usize,
        kind: &'static str,
        input: Vec<usize>,
    },
    #[error("model must end in a dense classifier layer")]
    MissingClassifier,
    #[error("batch of shape {got:?} does not match model input {expected:?}")]
    InputShape { expected: Vec<usize>, got: Vec<usize> },
    #[error("non-finite activation or gradient at layer {layer}")]
    NonFinite { layer: usize },
    #[error("tap {0:?} does not exist in this model")]
    InvalidTap(Tap),
    #[error("backward called in eval mode")]
    EvalModeBackward,
    #[error("expected {expected} labels, got {got}")]
    LabelCount { expected: usize, got: usize },
    #[error("label {label} at row {row} is outside 0..{classes}")]
    LabelRange { row: usize, label: usize, classes: usize },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("parameter `{0}` given twice")]
    DuplicateParam(String),
    #[error("parameter `{name}` has shape {got:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("`{0}` has a negative running variance")]
    NegativeRunningVar(String),
    #[error("learning rate must be positive, got {0}")]
    LearningRate(f64),
    #[error("momentum must lie in [0, 1), got {0}")]
    Momentum(f64),
    #[error("BN momentum must lie in (0, 1) and epsilon be non-negative, got {momentum}, {epsilon}")]
    BnConfig { momentum: f64, epsilon: f64 },
    #[error("local training needs at least one epoch")]
    ZeroEpochs,
    #[error("batch size must be positive")]
    ZeroBatchSize,
    #[error("cannot train on an empty dataset")]
    EmptyDataset,
    #[error("malformed checkpoint manifest: {0}")]
    CheckpointHeader(String),
    #[error("checkpoint payload has {got} bytes, manifest needs {expected}")]
    CheckpointPayload { expected: usize, got: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
