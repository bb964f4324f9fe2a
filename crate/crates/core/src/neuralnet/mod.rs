//! Dense feed-forward regressor with exact backpropagation.
//!
//! Weights are stored `fan_in x fan_out` so a batch `X (n x fan_in)` maps to
//! `X W + b`. Hidden layers share one activation; the output layer is linear.

mod loss;
mod mlp;
mod optim;

pub use loss::{combined_loss, mse_loss, LossWeights};
pub use mlp::{init_model, Activation, Gradients, Layer, Mlp, ModelConfig};
pub use optim::{adam_step, sgd_step, FreezeMask, OptimizerConfig, OptimizerKind, OptimizerState};
