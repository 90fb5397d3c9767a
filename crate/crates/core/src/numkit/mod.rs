//! Dense numeric core: matrices, the classifier and its gradients, losses,
//! optimizers, the learning-rate schedule and deterministic random streams.

mod gradcheck;
pub mod loss;
mod matrix;
mod model;
mod optim;
pub mod rng;

pub use gradcheck::{finite_diff_grad, finite_diff_grad_with};
pub use loss::{cross_entropy, one_hot, softmax, softmax_rows};
pub use matrix::Matrix;
pub use model::{
    backward_grads, forward_logits, linear_combination_params, mean_loss, Gradients, Layer,
    ModelParams, ModelSpec,
};
pub use optim::{cosine_lr, OptimizerKind, OptimizerState};
pub use rng::RngStream;
