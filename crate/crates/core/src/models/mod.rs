//! Convex linear classifiers: losses, regularized risk, training and metrics.

pub mod lbfgs;
pub mod loss;
pub mod metrics;
pub mod model;

pub use loss::{Loss, LossKind, DEFAULT_HUBER_GAMMA};
pub use metrics::{evaluate, predict, CostMatrix, Metrics};
pub use model::{
    full_gradient, full_hessian, hessian_at, loss_value, margins, objective, objective_gradient,
    per_sample_gradient, per_sample_hessian, per_sample_loss, train, train_from, ModelState,
    DEFAULT_TRAIN_TOL,
};
