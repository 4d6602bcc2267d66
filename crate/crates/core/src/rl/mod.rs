//! Model-free learning of v^ξ and its exponential policy.

pub mod approx;
pub mod checkpoint;
pub mod env;
pub mod mlp;
pub mod optim;
pub mod train;

pub use approx::{
    delta_xi, policy_matrix, regime_values, value_and_gradient, LinearValue, NeuralValue, Points,
    RegimeEncoding, ValueApproximator,
};
pub use checkpoint::{checkpoint_load, checkpoint_save, Checkpoint, SeedLineage};
pub use env::{Environment, ModelEnvironment};
pub use mlp::{Activation, Architecture, LayerSpec, NetworkParams};
pub use optim::{Optimizer, Schedule};
pub use train::{
    orthogonality_sample, train, train_with, LogRecord, TrainConfig, TrainingLog, UpdateMode,
    UpdateSample,
};
