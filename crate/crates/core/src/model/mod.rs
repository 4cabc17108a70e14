//! Residual temporal convolutional network: parameters, forward/backward,
//! optimizer and checkpoints.

pub mod checkpoint;
pub mod network;
pub mod optim;
pub mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
pub use network::{forward, forward_batch, loss_and_grads, predict, predict_batch, softmax, LossAndGrads, Mode};
pub use optim::{step_lr, Sgd};
pub use params::{BatchMoments, ModelConfig, ModelParams, Scalar, StageConfig, TensorKind};
