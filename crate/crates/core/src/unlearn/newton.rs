//! Value-weighted gradient, Hessian downdate and the one-step Newton update.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::dataset::Dataset;
use crate::error::{invalid, Error, Result};
use crate::models::{self, Loss};
use crate::unlearn::budget::RoundSize;
use crate::valuation::WeightMap;

/// `(1/m) Σ_{vᵢ ≠ 0} vᵢ (∇ℓ(w, zᵢ) + λw (+ b))` over the deleted points.
pub fn weighted_gradient(
    w: &DVector<f64>,
    deleted: &Dataset,
    weights: &WeightMap,
    lambda: f64,
    loss: &Loss,
    b: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    let v = deleted
        .ids()
        .iter()
        .map(|id| {
            weights
                .get(id)
                .copied()
                .ok_or_else(|| invalid(format!("no weight for deleted point {id}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    gradient_with_weights(w, deleted, &v, lambda, loss, b)
}

/// [`weighted_gradient`] with every weight equal to 1, i.e. `∇L(w; M)`.
pub fn unweighted_gradient(
    w: &DVector<f64>,
    deleted: &Dataset,
    lambda: f64,
    loss: &Loss,
    b: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    gradient_with_weights(w, deleted, &vec![1.0; deleted.n()], lambda, loss, b)
}

fn gradient_with_weights(
    w: &DVector<f64>,
    deleted: &Dataset,
    v: &[f64],
    lambda: f64,
    loss: &Loss,
    b: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    deleted.check_nonempty("deletion")?;
    if let Some(b) = b {
        if b.len() != w.len() {
            return Err(invalid("perturbation length does not match parameters"));
        }
    }
    let u = models::margins(w, deleted)?;
    let coef = DVector::from_iterator(
        deleted.n(),
        u.iter()
            .zip(deleted.labels())
            .zip(v)
            .map(|((&ui, &y), &vi)| {
                if vi == 0.0 {
                    0.0
                } else {
                    vi * loss.derivative(ui) * y
                }
            }),
    );
    let mut grad = deleted.features().tr_mul(&coef);
    let total: f64 = v.iter().sum();
    grad.axpy(total * lambda, w, 1.0);
    if let Some(b) = b {
        grad.axpy(total, b, 1.0);
    }
    Ok(grad / deleted.n() as f64)
}

/// Weights of 1 for every deleted point, reducing the weighted gradient to `∇L(w; M)`.
pub fn unit_weights(deleted: &Dataset) -> WeightMap {
    deleted.ids().iter().map(|id| (*id, 1.0)).collect()
}

/// Removes the deleted points' curvature from the running Hessian:
///
/// `Hᵗ = ((r + m) Hᵗ⁻¹ − Σᵢ (∇²ℓ(wᵗ⁻¹, zᵢ) + λI)) / r` with `r = n − S_t`.
///
/// Every deleted point is removed, whatever its weight.
pub fn hessian_downdate(
    h_prev: &DMatrix<f64>,
    w_prev: &DVector<f64>,
    deleted: &Dataset,
    size: RoundSize,
    lambda: f64,
    loss: &Loss,
) -> Result<DMatrix<f64>> {
    if size.remaining < 1 {
        return Err(Error::BudgetExhausted {
            round: size.round,
            remaining: size.remaining as i64,
        });
    }
    if deleted.n() != size.deleted {
        return Err(invalid(format!(
            "round {} expects {} deleted points, got {}",
            size.round,
            size.deleted,
            deleted.n()
        )));
    }
    let d = w_prev.len();
    if h_prev.shape() != (d, d) {
        return Err(invalid("hessian shape does not match parameter dimension"));
    }
    // Σ (∇²ℓ + λI) over the deleted points.
    let mut removed = models::hessian_at(w_prev, deleted, lambda, loss)?;
    removed *= deleted.n() as f64;
    let r = size.remaining as f64;
    let keep = (size.remaining + size.deleted) as f64;
    let mut h = DMatrix::from_fn(d, d, |i, j| (keep * h_prev[(i, j)] - removed[(i, j)]) / r);
    h.fill_lower_triangle_with_upper_triangle();
    Ok(h)
}

/// Cholesky factor of a Hessian whose smallest eigenvalue is at least `floor`.
pub fn factor_hessian(h: &DMatrix<f64>, floor: f64) -> Result<Cholesky<f64, Dyn>> {
    let d = h.nrows();
    let shifted = h - DMatrix::identity(d, d) * floor;
    if Cholesky::new(shifted).is_none() {
        return Err(Error::IllConditionedHessian { floor });
    }
    Cholesky::new(h.clone()).ok_or(Error::IllConditionedHessian { floor })
}

/// `wᵗ = wᵗ⁻¹ + (m / r) · (Hᵗ)⁻¹ ∇_v`, solved by Cholesky. Fails when `Hᵗ` has an
/// eigenvalue below `λ/2`.
pub fn dvwu_newton_step(
    w_prev: &DVector<f64>,
    h_t: &DMatrix<f64>,
    grad_v: &DVector<f64>,
    size: RoundSize,
    lambda: f64,
) -> Result<DVector<f64>> {
    if size.remaining < 1 {
        return Err(Error::BudgetExhausted {
            round: size.round,
            remaining: size.remaining as i64,
        });
    }
    if grad_v.len() != w_prev.len() || h_t.shape() != (w_prev.len(), w_prev.len()) {
        return Err(invalid("newton step operands have mismatched dimensions"));
    }
    let chol = factor_hessian(h_t, lambda / 2.0)?;
    let step = chol.solve(grad_v);
    Ok(w_prev + step * size.step_factor())
}

/// `‖∇L(w; data) (+ b)‖₂`.
pub fn gradient_residual(
    w: &DVector<f64>,
    data: &Dataset,
    lambda: f64,
    loss: &Loss,
    b: Option<&DVector<f64>>,
) -> Result<f64> {
    Ok(models::objective_gradient(w, data, lambda, loss, b)?.norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::PointId;
    use crate::models::ModelState;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data(n: usize, d: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-0.5..0.5));
        let y = (0..n)
            .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
            .collect();
        Dataset::with_sequential_ids(x, y).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_gradient() {
        let del = data(4, 3, 1);
        let weights = del.ids().iter().map(|id| (*id, 0.0)).collect();
        let w = DVector::from_vec(vec![0.3, -0.2, 0.9]);
        let g = weighted_gradient(&w, &del, &weights, 0.1, &Loss::logistic(), None).unwrap();
        assert_eq!(g, DVector::zeros(3));
    }

    #[test]
    fn unit_weights_give_the_deleted_set_gradient() {
        let del = data(6, 3, 2);
        let w = DVector::from_vec(vec![0.3, -0.2, 0.9]);
        let g =
            weighted_gradient(&w, &del, &unit_weights(&del), 0.1, &Loss::logistic(), None).unwrap();
        let full = models::objective_gradient(&w, &del, 0.1, &Loss::logistic(), None).unwrap();
        assert!((g - full).amax() < 1e-15);
    }

    #[test]
    fn mixed_weights_match_direct_sum() {
        let del = data(3, 2, 3);
        let w = DVector::from_vec(vec![0.7, -1.1]);
        let b = DVector::from_vec(vec![0.01, 0.02]);
        let (lambda, vs) = (0.05, [0.25, 0.0, 1.0]);
        let weights = del.ids().iter().zip(vs).map(|(id, v)| (*id, v)).collect();
        let g = weighted_gradient(&w, &del, &weights, lambda, &Loss::logistic(), Some(&b)).unwrap();
        let mut expect = [0.0; 2];
        for i in 0..3 {
            let (x0, x1, y) = (del.features()[(i, 0)], del.features()[(i, 1)], del.label(i));
            let u = y * (x0 * w[0] + x1 * w[1]);
            let coef = -y / (1.0 + u.exp());
            expect[0] += vs[i] * (coef * x0 + lambda * w[0] + b[0]);
            expect[1] += vs[i] * (coef * x1 + lambda * w[1] + b[1]);
        }
        assert!((g[0] - expect[0] / 3.0).abs() < 1e-12);
        assert!((g[1] - expect[1] / 3.0).abs() < 1e-12);
    }

    #[test]
    fn missing_weight_is_an_error() {
        let del = data(2, 2, 4);
        let mut weights = unit_weights(&del);
        weights.remove(&PointId(1));
        assert!(weighted_gradient(
            &DVector::zeros(2),
            &del,
            &weights,
            0.1,
            &Loss::logistic(),
            None
        )
        .is_err());
    }

    #[test]
    fn downdate_at_round_one_equals_recompute() {
        let all = data(60, 3, 5);
        let m = ModelState::at(
            DVector::from_vec(vec![0.4, -0.3, 1.2]),
            &all,
            0.01,
            Loss::logistic(),
            None,
        )
        .unwrap();
        let ids: Vec<PointId> = (0..10).map(PointId).collect();
        let (rest, del) = all.remove(&ids).unwrap();
        let size = RoundSize::uniform(60, 10, 1).unwrap();
        let h = hessian_downdate(&m.hessian, &m.w, &del, size, 0.01, &m.loss).unwrap();
        let direct = models::hessian_at(&m.w, &rest, 0.01, &m.loss).unwrap();
        assert!((&h - direct).amax() < 1e-10);
        assert_eq!(&h - h.transpose(), DMatrix::zeros(3, 3));
    }

    #[test]
    fn downdate_of_identical_curvature_is_identity() {
        // Squared loss: every per-sample Hessian is x xᵀ; make all rows equal.
        let x = DMatrix::from_fn(8, 2, |_, j| [0.3, -0.6][j]);
        let all = Dataset::with_sequential_ids(x, vec![1.0; 8]).unwrap();
        let w = DVector::from_vec(vec![0.2, 0.1]);
        let h = models::hessian_at(&w, &all, 0.1, &Loss::squared()).unwrap();
        let (_, del) = all.remove(&[PointId(0), PointId(1)]).unwrap();
        let size = RoundSize::uniform(8, 2, 1).unwrap();
        let ht = hessian_downdate(&h, &w, &del, size, 0.1, &Loss::squared()).unwrap();
        assert!((ht - h).amax() < 1e-15);
    }

    #[test]
    fn downdate_rejects_wrong_count() {
        let del = data(3, 2, 6);
        let size = RoundSize {
            round: 1,
            deleted: 2,
            remaining: 5,
        };
        assert!(hessian_downdate(
            &DMatrix::identity(2, 2),
            &DVector::zeros(2),
            &del,
            size,
            0.1,
            &Loss::logistic()
        )
        .is_err());
    }

    #[test]
    fn zero_gradient_step_is_identity() {
        let w = DVector::from_vec(vec![1.0, 2.0]);
        let size = RoundSize::uniform(100, 10, 1).unwrap();
        let out =
            dvwu_newton_step(&w, &DMatrix::identity(2, 2), &DVector::zeros(2), size, 0.1).unwrap();
        assert_eq!(out, w);
    }

    #[test]
    fn step_scales_linearly_in_m() {
        let w = DVector::zeros(2);
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let g = DVector::from_vec(vec![0.3, -0.7]);
        let one = dvwu_newton_step(
            &w,
            &h,
            &g,
            RoundSize {
                round: 1,
                deleted: 10,
                remaining: 50,
            },
            0.1,
        )
        .unwrap();
        let two = dvwu_newton_step(
            &w,
            &h,
            &g,
            RoundSize {
                round: 1,
                deleted: 20,
                remaining: 50,
            },
            0.1,
        )
        .unwrap();
        assert!((two - one * 2.0).amax() < 1e-15);
    }

    #[test]
    fn ill_conditioned_hessian_is_reported() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.01]);
        let size = RoundSize {
            round: 1,
            deleted: 1,
            remaining: 10,
        };
        let err =
            dvwu_newton_step(&DVector::zeros(2), &h, &DVector::zeros(2), size, 0.1).unwrap_err();
        assert!(matches!(err, Error::IllConditionedHessian { .. }));
    }

    #[test]
    fn residual_matches_naive_gradient() {
        let d = data(40, 3, 7);
        let w = DVector::from_vec(vec![0.1, 0.5, -0.5]);
        let r = gradient_residual(&w, &d, 0.02, &Loss::logistic(), None).unwrap();
        let mut g = [0.0; 3];
        for i in 0..40 {
            let row: Vec<f64> = d.row(i).iter().copied().collect();
            let u = d.label(i) * (row[0] * w[0] + row[1] * w[1] + row[2] * w[2]);
            let coef = -d.label(i) / (1.0 + u.exp());
            for j in 0..3 {
                g[j] += coef * row[j] / 40.0;
            }
        }
        let naive = (0..3)
            .map(|j| (g[j] + 0.02 * w[j]).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!((r - naive).abs() < 1e-12);
    }
}
