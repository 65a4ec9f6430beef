//! Data value-weighted certified unlearning for convex linear classifiers.

// Bounds checks are written `!(x > 0.0)` on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod models;
pub mod seeds;
pub mod unlearn;
pub mod valuation;

pub use dataset::{Dataset, PointId};
pub use error::{Error, Result};

pub use data::{Standardizer, SynthConfig};
pub use harness::{ExperimentConfig, ExperimentReport, Method, RoundRecord};
pub use models::{CostMatrix, Loss, LossKind, Metrics, ModelState};
pub use unlearn::{CertBudget, DeletionSchedule, Perturbation, RoundOutcome, UnlearningSession};
pub use valuation::{ValuationMethod, ValueMap, ValueProfile, WeightMap};
