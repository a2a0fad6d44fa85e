//! Dense tensors, reverse-mode autodiff, Adam, and the checkpoint container.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod ops;
pub mod optim;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use gradcheck::{grad_check, grad_check_params};
pub use graph::{Gradients, Graph, Var};
pub use ops::{cross_entropy, kl_div, max_pool_time, softmax};
pub use optim::{AdamConfig, OptimizerState};
pub use tensor::Tensor;
