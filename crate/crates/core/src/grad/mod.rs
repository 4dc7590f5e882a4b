//! Reverse-mode gradients of trajectory losses and the training loop.

pub mod adam;
mod gradient;
pub mod loss;
mod train;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use gradient::{gradient, Experiment, GradMemory, GradientResult};
pub use loss::{loss, LossPoint, LossSpec, LossTerm, Quantity};
pub use train::{train, EpochReport, SeedPolicy, TrainConfig, TrainResult};
