//! Regularized empirical risk `L(w; D) = (1/n) Σ ℓ(w, zᵢ) + (λ/2)‖w‖² (+ bᵀw)` and its
//! derivatives, plus training.

use nalgebra::storage::Storage;
use nalgebra::{DMatrix, DVector, Dyn, Matrix, U1};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{invalid, Result};
use crate::models::lbfgs::{self, LbfgsConfig};
use crate::models::loss::Loss;

pub const DEFAULT_TRAIN_TOL: f64 = 1e-8;
pub const MAX_TRAIN_ITER: usize = 1000;

/// Parameters of a trained linear model together with the regularized Hessian at `w`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub w: DVector<f64>,
    pub hessian: DMatrix<f64>,
    pub lambda: f64,
    pub loss: Loss,
    /// Objective-perturbation vector `b`, when the model minimizes `L + bᵀw`.
    pub perturbation: Option<DVector<f64>>,
}

impl ModelState {
    pub fn d(&self) -> usize {
        self.w.len()
    }

    /// A model at `w` whose Hessian is recomputed on `data`.
    pub fn at(
        w: DVector<f64>,
        data: &Dataset,
        lambda: f64,
        loss: Loss,
        perturbation: Option<DVector<f64>>,
    ) -> Result<Self> {
        let hessian = hessian_at(&w, data, lambda, &loss)?;
        Ok(Self {
            w,
            hessian,
            lambda,
            loss,
            perturbation,
        })
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(invalid(format!(
            "regularization lambda must be positive, got {lambda}"
        )));
    }
    Ok(())
}

fn check_perturbation(b: Option<&DVector<f64>>, d: usize) -> Result<()> {
    match b {
        Some(b) if b.len() != d => Err(invalid(format!(
            "perturbation has length {}, model has dimension {d}",
            b.len()
        ))),
        _ => Ok(()),
    }
}

/// Margins `yᵢ · wᵀxᵢ` for every row.
pub fn margins(w: &DVector<f64>, data: &Dataset) -> Result<DVector<f64>> {
    data.check_dim(w.len())?;
    let mut u = data.features() * w;
    for (ui, y) in u.iter_mut().zip(data.labels()) {
        *ui *= y;
    }
    Ok(u)
}

/// `L(w; data)` (plus `bᵀw` when `b` is given).
pub fn objective(
    w: &DVector<f64>,
    data: &Dataset,
    lambda: f64,
    loss: &Loss,
    b: Option<&DVector<f64>>,
) -> Result<f64> {
    data.check_nonempty("training")?;
    check_perturbation(b, w.len())?;
    let u = margins(w, data)?;
    let n = data.n() as f64;
    let risk = u.iter().map(|&m| loss.value(m)).sum::<f64>() / n;
    let mut value = risk + 0.5 * lambda * w.norm_squared();
    if let Some(b) = b {
        value += b.dot(w);
    }
    Ok(value)
}

/// `∇L(w; data)` (plus `b`).
pub fn objective_gradient(
    w: &DVector<f64>,
    data: &Dataset,
    lambda: f64,
    loss: &Loss,
    b: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    data.check_nonempty("training")?;
    check_perturbation(b, w.len())?;
    Ok(value_and_gradient(w, data, lambda, loss, b).1)
}

fn value_and_gradient(
    w: &DVector<f64>,
    data: &Dataset,
    lambda: f64,
    loss: &Loss,
    b: Option<&DVector<f64>>,
) -> (f64, DVector<f64>) {
    let n = data.n() as f64;
    let xw = data.features() * w;
    let mut value = 0.0;
    let coef = DVector::from_iterator(
        data.n(),
        xw.iter().zip(data.labels()).map(|(&s, &y)| {
            let u = y * s;
            value += loss.value(u);
            loss.derivative(u) * y / n
        }),
    );
    let mut grad = data.features().tr_mul(&coef);
    grad.axpy(lambda, w, 1.0);
    value = value / n + 0.5 * lambda * w.norm_squared();
    if let Some(b) = b {
        grad += b;
        value += b.dot(w);
    }
    (value, grad)
}

/// `∇²L(w; data) = (1/n) Σ ∇²ℓ(w, zᵢ) + λI`, exactly symmetric.
pub fn hessian_at(
    w: &DVector<f64>,
    data: &Dataset,
    lambda: f64,
    loss: &Loss,
) -> Result<DMatrix<f64>> {
    data.check_nonempty("training")?;
    let u = margins(w, data)?;
    let n = data.n() as f64;
    let mut scaled = data.features().clone();
    for (i, &m) in u.iter().enumerate() {
        let h = loss.second_derivative(m) / n;
        scaled.row_mut(i).scale_mut(h);
    }
    let mut hess = data.features().tr_mul(&scaled);
    hess.fill_lower_triangle_with_upper_triangle();
    for j in 0..hess.ncols() {
        hess[(j, j)] += lambda;
    }
    Ok(hess)
}

/// Regularized objective of `model` on `data`, including `bᵀw` when the model carries `b`.
pub fn loss_value(model: &ModelState, data: &Dataset) -> Result<f64> {
    objective(
        &model.w,
        data,
        model.lambda,
        &model.loss,
        model.perturbation.as_ref(),
    )
}

/// `∇L(model.w; data)` including `b`.
pub fn full_gradient(model: &ModelState, data: &Dataset) -> Result<DVector<f64>> {
    objective_gradient(
        &model.w,
        data,
        model.lambda,
        &model.loss,
        model.perturbation.as_ref(),
    )
}

pub fn full_hessian(model: &ModelState, data: &Dataset) -> Result<DMatrix<f64>> {
    hessian_at(&model.w, data, model.lambda, &model.loss)
}

fn sample_margin<S: Storage<f64, U1, Dyn>>(
    w: &DVector<f64>,
    x: &Matrix<f64, U1, Dyn, S>,
    y: f64,
) -> Result<f64> {
    if x.len() != w.len() {
        return Err(invalid(format!(
            "dimension mismatch: point has {} features, model has {}",
            x.len(),
            w.len()
        )));
    }
    Ok(y * x.iter().zip(w.iter()).map(|(a, b)| a * b).sum::<f64>())
}

pub fn per_sample_loss<S: Storage<f64, U1, Dyn>>(
    model: &ModelState,
    x: &Matrix<f64, U1, Dyn, S>,
    y: f64,
) -> Result<f64> {
    Ok(model.loss.value(sample_margin(&model.w, x, y)?))
}

/// Gradient of the unregularized per-sample loss `∇ℓ(w, (x, y))`.
pub fn per_sample_gradient<S: Storage<f64, U1, Dyn>>(
    model: &ModelState,
    x: &Matrix<f64, U1, Dyn, S>,
    y: f64,
) -> Result<DVector<f64>> {
    sample_gradient(&model.w, &model.loss, x, y)
}

pub(crate) fn sample_gradient<S: Storage<f64, U1, Dyn>>(
    w: &DVector<f64>,
    loss: &Loss,
    x: &Matrix<f64, U1, Dyn, S>,
    y: f64,
) -> Result<DVector<f64>> {
    let coef = loss.derivative(sample_margin(w, x, y)?) * y;
    Ok(DVector::from_iterator(x.len(), x.iter().map(|v| coef * v)))
}

/// Hessian of the unregularized per-sample loss, `ℓ''(u) · x xᵀ`.
pub fn per_sample_hessian<S: Storage<f64, U1, Dyn>>(
    model: &ModelState,
    x: &Matrix<f64, U1, Dyn, S>,
    y: f64,
) -> Result<DMatrix<f64>> {
    let h = model.loss.second_derivative(sample_margin(&model.w, x, y)?);
    let d = x.len();
    Ok(DMatrix::from_fn(d, d, |i, j| h * x[i] * x[j]))
}

/// Minimizes `L(·; data)` (or `L + bᵀw`) from `w = 0` to gradient norm `tol`.
pub fn train(
    data: &Dataset,
    lambda: f64,
    loss: Loss,
    b: Option<DVector<f64>>,
    tol: f64,
) -> Result<ModelState> {
    let init = DVector::zeros(data.d());
    train_from(data, lambda, loss, b, tol, init)
}

/// Same as [`train`] but starting the optimizer at `init`.
pub fn train_from(
    data: &Dataset,
    lambda: f64,
    loss: Loss,
    b: Option<DVector<f64>>,
    tol: f64,
    init: DVector<f64>,
) -> Result<ModelState> {
    let w = minimize_objective(data, lambda, &loss, b.as_ref(), tol, init)?;
    ModelState::at(w, data, lambda, loss, b)
}

/// Like [`train_from`] without forming the Hessian at the optimum.
pub fn fit_parameters(
    data: &Dataset,
    lambda: f64,
    loss: &Loss,
    b: Option<&DVector<f64>>,
    tol: f64,
    init: DVector<f64>,
) -> Result<DVector<f64>> {
    minimize_objective(data, lambda, loss, b, tol, init)
}

fn minimize_objective(
    data: &Dataset,
    lambda: f64,
    loss: &Loss,
    b: Option<&DVector<f64>>,
    tol: f64,
    init: DVector<f64>,
) -> Result<DVector<f64>> {
    data.check_nonempty("training")?;
    check_lambda(lambda)?;
    loss.validate()?;
    if !(tol > 0.0) {
        return Err(invalid(format!(
            "training tolerance must be positive, got {tol}"
        )));
    }
    check_perturbation(b, data.d())?;
    if init.len() != data.d() {
        return Err(invalid("initial point has the wrong dimension"));
    }
    let cfg = LbfgsConfig {
        tol,
        max_iter: MAX_TRAIN_ITER,
        ..Default::default()
    };
    let min = lbfgs::minimize(|w| value_and_gradient(w, data, lambda, loss, b), init, &cfg)?;
    Ok(min.x)
}
