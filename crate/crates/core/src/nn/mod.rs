//! Feed-forward network engine: layers, reverse-mode gradients, SGD and
//! distillation.

mod layer;
mod loss;
mod network;
pub mod serialize;
mod train;

pub use layer::{Conv2d, Dense, Layer, ParamGrad, Shape};
pub use loss::{cross_entropy, logit_kl, sp_kd_loss, sp_kd_loss_grad};
pub use network::{evaluate, Gradients, Network};
pub use train::{
    distill, distill_with_history, grad, step, train, EpochStats, KdConfig, KdMode, Objective, Step,
    TrainConfig,
};

pub(crate) use layer::conv_output_hw;
