//! Unweighted unlearning baselines and the value-weighted gradient-ascent variant.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::dataset::Dataset;
use crate::error::{invalid, Error, Result};
use crate::models::Loss;
use crate::unlearn::budget::RoundSize;
use crate::unlearn::newton::{dvwu_newton_step, unweighted_gradient, weighted_gradient};
use crate::valuation::WeightMap;

pub const DEFAULT_ASCENT_STEP: f64 = 0.01;
pub const DEFAULT_ASCENT_STEPS: usize = 5;

/// One-step Newton removal: `w′ = w + (m/r) · H⁻¹ ∇L(w; M)` with `h_remaining` the
/// Hessian on the remaining data. Identical to the weighted update with unit weights.
pub fn unlearn_newton_unweighted(
    w: &DVector<f64>,
    h_remaining: &DMatrix<f64>,
    deleted: &Dataset,
    size: RoundSize,
    lambda: f64,
    loss: &Loss,
    b: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    let grad = unweighted_gradient(w, deleted, lambda, loss, b)?;
    dvwu_newton_step(w, h_remaining, &grad, size, lambda)
}

/// A Cholesky factorization of the full-data Hessian, computed once and reused for
/// every deletion.
#[derive(Clone, Debug)]
pub struct InfluenceFactor {
    chol: Cholesky<f64, Dyn>,
}

impl InfluenceFactor {
    pub fn new(h0: &DMatrix<f64>) -> Result<Self> {
        if !h0.is_square() {
            return Err(invalid("hessian must be square"));
        }
        let chol = Cholesky::new(h0.clone()).ok_or(Error::IllConditionedHessian { floor: 0.0 })?;
        Ok(Self { chol })
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }
}

/// Influence-function removal: `w′ = w + (m/r) · H₀⁻¹ ∇L(w; M)` with the full-data
/// Hessian `H₀` never updated.
pub fn unlearn_influence(
    w: &DVector<f64>,
    factor: &InfluenceFactor,
    deleted: &Dataset,
    size: RoundSize,
    lambda: f64,
    loss: &Loss,
) -> Result<DVector<f64>> {
    if factor.dim() != w.len() {
        return Err(invalid(
            "influence factor dimension does not match parameters",
        ));
    }
    let grad = unweighted_gradient(w, deleted, lambda, loss, None)?;
    Ok(w + factor.solve(&grad) * size.step_factor())
}

/// Gradient ascent on the deleted points: `steps` iterations of
/// `w ← w + η (1/m) Σ vᵢ (∇ℓ(w, zᵢ) + λw)`, with `vᵢ ≡ 1` when `weights` is `None`.
pub fn unlearn_gradient_ascent(
    w: &DVector<f64>,
    deleted: &Dataset,
    weights: Option<&WeightMap>,
    eta: f64,
    steps: usize,
    lambda: f64,
    loss: &Loss,
) -> Result<DVector<f64>> {
    if !(eta > 0.0) {
        return Err(invalid(format!(
            "ascent step size must be positive, got {eta}"
        )));
    }
    if steps == 0 {
        return Err(invalid("gradient ascent needs at least one step"));
    }
    let mut cur = w.clone();
    for _ in 0..steps {
        let g = match weights {
            Some(v) => weighted_gradient(&cur, deleted, v, lambda, loss, None)?,
            None => unweighted_gradient(&cur, deleted, lambda, loss, None)?,
        };
        cur.axpy(eta, &g, 1.0);
    }
    Ok(cur)
}
