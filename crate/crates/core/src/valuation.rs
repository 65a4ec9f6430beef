//! Data valuation (leave-one-out, exact KNN-Shapley) and the value-to-weight mapping.
//!
//! A point's weight controls how strongly it is unlearned: `1` removes its full
//! gradient contribution, `0` drops it without touching the parameters, and values in
//! between damp the update for points that help the model.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, PointId};
use crate::error::{invalid, Error, Result};
use crate::models::{self, evaluate, CostMatrix, Loss, DEFAULT_TRAIN_TOL};

pub type ValueMap = BTreeMap<PointId, f64>;
pub type WeightMap = BTreeMap<PointId, f64>;

pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_ZERO_TOL: f64 = 1e-9;
pub const DEFAULT_K: usize = 5;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValuationKind {
    LeaveOneOut,
    KnnShapley,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValuationMode {
    /// Values computed once on the initial data and carried over.
    Static,
    /// Values recomputed on the remaining data after every round.
    Dynamic,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValuationMethod {
    pub kind: ValuationKind,
    pub mode: ValuationMode,
    pub k: usize,
}

impl ValuationMethod {
    pub fn new(kind: ValuationKind, mode: ValuationMode) -> Self {
        Self {
            kind,
            mode,
            k: DEFAULT_K,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(invalid("KNN neighbour count k must be at least 1"));
        }
        Ok(())
    }

    /// Values of every point in `train` against `utility` (validation set for
    /// leave-one-out, test set for KNN-Shapley).
    pub fn compute(
        &self,
        train: &Dataset,
        utility: &Dataset,
        lambda: f64,
        loss: Loss,
    ) -> Result<ValueMap> {
        self.validate()?;
        match self.kind {
            ValuationKind::LeaveOneOut => loo_values(train, utility, lambda, loss),
            ValuationKind::KnnShapley => knn_sv(train, utility, self.k),
        }
    }
}

/// Data values and the weights derived from them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueProfile {
    pub values: ValueMap,
    /// Smallest positive value of the first round; `None` when that round had none.
    pub q_min_plus: Option<f64>,
    pub alpha: f64,
    pub zero_tol: f64,
    pub weights: WeightMap,
}

impl ValueProfile {
    /// Profile for the first round. Fixes `q_min_plus` for the rest of the run.
    pub fn initial(values: ValueMap, alpha: f64, zero_tol: f64) -> Result<Self> {
        check_alpha(alpha, zero_tol)?;
        let q_min_plus = values
            .values()
            .copied()
            .filter(|&q| q > zero_tol)
            .min_by(f64::total_cmp);
        let weights = derive_weights(&values, q_min_plus, alpha, zero_tol);
        Ok(Self {
            values,
            q_min_plus,
            alpha,
            zero_tol,
            weights,
        })
    }

    /// Same anchor and coefficients, new values.
    pub fn with_values(&self, values: ValueMap) -> Self {
        let weights = derive_weights(&values, self.q_min_plus, self.alpha, self.zero_tol);
        Self {
            values,
            q_min_plus: self.q_min_plus,
            alpha: self.alpha,
            zero_tol: self.zero_tol,
            weights,
        }
    }

    pub fn weight(&self, id: PointId) -> Option<f64> {
        self.weights.get(&id).copied()
    }

    /// Writes `id,q,v` rows sorted by id.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        w.write_record(["id", "q", "v"])?;
        for (id, q) in &self.values {
            let v = self.weights.get(id).copied().unwrap_or(f64::NAN);
            w.write_record([id.to_string(), q.to_string(), v.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Load {
            path: path.to_path_buf(),
            reason: format!("{other:?}"),
        },
    }
}

fn check_alpha(alpha: f64, zero_tol: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(invalid(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    if !(zero_tol >= 0.0) {
        return Err(invalid(format!(
            "zero tolerance must be nonnegative, got {zero_tol}"
        )));
    }
    Ok(())
}

fn weight_for(q: f64, anchor: Option<f64>, alpha: f64, zero_tol: f64) -> f64 {
    if q < -zero_tol {
        1.0
    } else if q <= zero_tol {
        0.0
    } else {
        match anchor {
            Some(a) => (alpha * a / q).min(1.0),
            // No positive value existed in the first round: the point anchors itself.
            None => alpha,
        }
    }
}

fn derive_weights(values: &ValueMap, anchor: Option<f64>, alpha: f64, zero_tol: f64) -> WeightMap {
    values
        .iter()
        .map(|(id, &q)| (*id, weight_for(q, anchor, alpha, zero_tol)))
        .collect()
}

/// Maps values to unlearning weights: negative → 1, zero → 0, positive →
/// `min(1, α · q_min_plus / q)`.
pub fn weights_from_values(
    values: &ValueMap,
    q_min_plus: f64,
    alpha: f64,
    zero_tol: f64,
) -> Result<WeightMap> {
    if !(q_min_plus > 0.0) {
        return Err(invalid(format!(
            "q_min_plus must be positive, got {q_min_plus}"
        )));
    }
    check_alpha(alpha, zero_tol)?;
    Ok(derive_weights(values, Some(q_min_plus), alpha, zero_tol))
}

/// Leave-one-out values: validation accuracy of the full model minus that of the model
/// retrained without the point.
pub fn loo_values(
    train: &Dataset,
    validation: &Dataset,
    lambda: f64,
    loss: Loss,
) -> Result<ValueMap> {
    if train.n() < 2 {
        return Err(invalid(
            "leave-one-out valuation needs at least two training points",
        ));
    }
    validation.check_nonempty("validation")?;
    validation.check_dim(train.d())?;
    let full = models::model::fit_parameters(
        train,
        lambda,
        &loss,
        None,
        DEFAULT_TRAIN_TOL,
        nalgebra::DVector::zeros(train.d()),
    )?;
    let base = evaluate(&full, validation, CostMatrix::default())?.accuracy;

    let values = (0..train.n())
        .into_par_iter()
        .map(|i| {
            let keep: Vec<usize> = (0..train.n()).filter(|&j| j != i).collect();
            let reduced = train.select(&keep);
            // Warm start: the leave-one-out optimum sits close to the full one.
            let w = models::model::fit_parameters(
                &reduced,
                lambda,
                &loss,
                None,
                DEFAULT_TRAIN_TOL,
                full.clone(),
            )?;
            let acc = evaluate(&w, validation, CostMatrix::default())?.accuracy;
            Ok((train.id(i), base - acc))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(values.into_iter().collect())
}

const KNN_CHUNK: usize = 64;

/// Exact Shapley values of the K-nearest-neighbour utility, averaged over test points.
///
/// Training points are ordered by Euclidean distance to each test point (ties by id),
/// then values are filled in from the farthest point inward.
pub fn knn_sv(train: &Dataset, test: &Dataset, k: usize) -> Result<ValueMap> {
    train.check_nonempty("training")?;
    test.check_nonempty("test")?;
    test.check_dim(train.d())?;
    if k == 0 {
        return Err(invalid("KNN neighbour count k must be at least 1"));
    }
    let d = train.d();
    let rows: Vec<f64> = (0..train.n())
        .flat_map(|i| train.row(i).iter().copied().collect::<Vec<_>>())
        .collect();
    let test_rows: Vec<Vec<f64>> = (0..test.n())
        .map(|i| test.row(i).iter().copied().collect())
        .collect();

    // Fixed-size chunks summed in order keep the reduction independent of thread count.
    let partials: Vec<Vec<f64>> = test_rows
        .par_chunks(KNN_CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut acc = vec![0.0; train.n()];
            let mut order: Vec<usize> = (0..train.n()).collect();
            let mut dist = vec![0.0; train.n()];
            for (off, x) in chunk.iter().enumerate() {
                let y_test = test.label(c * KNN_CHUNK + off);
                for (i, di) in dist.iter_mut().enumerate() {
                    let r = &rows[i * d..(i + 1) * d];
                    *di = r.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                }
                order.sort_unstable_by(|&a, &b| {
                    dist[a]
                        .total_cmp(&dist[b])
                        .then(train.id(a).cmp(&train.id(b)))
                });
                knn_recursion(&order, |i| train.label(i) == y_test, k, &mut acc);
            }
            acc
        })
        .collect();

    let mut total = vec![0.0; train.n()];
    for p in &partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    let m = test.n() as f64;
    Ok(train
        .ids()
        .iter()
        .zip(total)
        .map(|(id, s)| (*id, s / m))
        .collect())
}

/// Adds the Shapley values for one test point into `acc`; `order` lists training
/// indices nearest first.
fn knn_recursion(order: &[usize], matches: impl Fn(usize) -> bool, k: usize, acc: &mut [f64]) {
    let n = order.len();
    let hit = |pos: usize| if matches(order[pos]) { 1.0 } else { 0.0 };
    let kf = k as f64;
    // Farthest point: it only matters in coalitions with fewer than k members.
    let mut s = hit(n - 1) / (n.max(k) as f64);
    acc[order[n - 1]] += s;
    for j in (1..n).rev() {
        // 1-based rank j of order[j - 1]
        let rank = j as f64;
        s += (hit(j - 1) - hit(j)) / kf * (k.min(j) as f64) / rank;
        acc[order[j - 1]] += s;
    }
}

/// Refreshes a profile after a deletion round. Dynamic mode recomputes values on the
/// remaining data; static mode keeps the old values of the surviving ids.
pub fn dynamic_update(
    profile: &ValueProfile,
    remaining: &Dataset,
    utility: &Dataset,
    method: &ValuationMethod,
    lambda: f64,
    loss: Loss,
) -> Result<ValueProfile> {
    remaining.check_nonempty("remaining")?;
    let values = match method.mode {
        ValuationMode::Dynamic => method.compute(remaining, utility, lambda, loss)?,
        ValuationMode::Static => remaining
            .ids()
            .iter()
            .map(|id| {
                profile
                    .values
                    .get(id)
                    .map(|q| (*id, *q))
                    .ok_or_else(|| invalid(format!("no stored value for point {id}")))
            })
            .collect::<Result<ValueMap>>()?,
    };
    Ok(profile.with_values(values))
}
