//! Deletion updates, certification budgets and the continuous-deletion session.

pub mod baselines;
pub mod budget;
pub mod newton;
pub mod session;

pub use baselines::{
    unlearn_gradient_ascent, unlearn_influence, unlearn_newton_unweighted, InfluenceFactor,
    DEFAULT_ASCENT_STEP, DEFAULT_ASCENT_STEPS,
};
pub use budget::{
    gauss_constant, gaussian_noise, objective_perturb_setup, output_perturb, CertBudget,
    DeletionSchedule, RoundSize,
};
pub use newton::{
    dvwu_newton_step, factor_hessian, gradient_residual, hessian_downdate, unit_weights,
    unweighted_gradient, weighted_gradient,
};
pub use session::{
    certify_or_retrain, Certification, Perturbation, PhaseTimings, RoundOutcome, SessionConfig,
    ThresholdKind, UnlearningSession,
};
