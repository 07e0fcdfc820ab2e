//! Dense feed-forward networks with hand-written gradients.
//!
//! Targets, shadow models and quantile regressors are all [`MlpModel`]s.
//! Gradients are derived by hand for the three supported losses and guarded
//! by the central-difference checker in [`gradcheck`].

pub mod checkpoint;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod train;

pub use checkpoint::{model_from_str, model_to_string, read_model, write_model};
pub use gradcheck::{grad_check, GradCheckReport};
pub use loss::{
    gaussian_nll, gaussian_nll_grad, pinball_grad, pinball_loss, softmax, softmax_cross_entropy,
    LossSpec, Targets, LOG_VAR_BOUND,
};
pub use model::{Activation, Architecture, Gradients, Layer, MlpModel};
pub use train::{batch_gradient, train, OptConfig, Optimizer};
