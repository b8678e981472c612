//! Minimal dense network toolkit: tensors, MLPs with manual backprop, AdamW,
//! gradient checking and checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod loss;
pub mod mlp;
pub mod optim;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use mlp::{Activation, ForwardCache, Gradients, Mlp, MlpSpec};
pub use optim::{adamw_step, AdamWConfig, AdamWState};
pub use tensor::Tensor;
