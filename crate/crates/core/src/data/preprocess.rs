//! Standardization, row-norm bounding and seeded train/validation/test splits.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{invalid, Result};

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.7;
pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.1;

/// Per-column mean and scale fitted on training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: DVector<f64>,
    /// Sample standard deviation, or 1 for constant columns.
    pub scale: DVector<f64>,
}

impl Standardizer {
    pub fn fit(data: &Dataset) -> Result<Self> {
        let n = data.n();
        if n < 2 {
            return Err(invalid("standardization needs at least 2 rows"));
        }
        let x = data.features();
        let mean = DVector::from_iterator(data.d(), x.column_iter().map(|c| c.sum() / n as f64));
        let scale = DVector::from_iterator(
            data.d(),
            x.column_iter().zip(mean.iter()).map(|(c, &mu)| {
                let var = c.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (n - 1) as f64;
                let sd = var.sqrt();
                if sd > 1e-12 * mu.abs().max(1.0) {
                    sd
                } else {
                    1.0
                }
            }),
        );
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        data.check_dim(self.mean.len())?;
        let x = DMatrix::from_fn(data.n(), data.d(), |i, j| {
            (data.features()[(i, j)] - self.mean[j]) / self.scale[j]
        });
        data.with_features(x)
    }
}

/// Fits on `data` and returns the transformed data with the fitted record.
pub fn standardize(data: &Dataset) -> Result<(Dataset, Standardizer)> {
    let s = Standardizer::fit(data)?;
    Ok((s.apply(data)?, s))
}

/// The divisor that brings every row norm of `data` to at most 1.
pub fn norm_scale(data: &Dataset) -> f64 {
    data.max_row_norm().max(1.0)
}

/// Divides every row by `scale`.
pub fn scale_rows(data: &Dataset, scale: f64) -> Result<Dataset> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(invalid(format!("row scale must be positive, got {scale}")));
    }
    data.with_features(data.features() / scale)
}

/// Divides all rows by `max(1, max_i ‖x_i‖)`.
pub fn norm_bound(data: &Dataset) -> Result<(Dataset, f64)> {
    data.check_nonempty("norm bounding")?;
    let s = norm_scale(data);
    Ok((scale_rows(data, s)?, s))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Dataset,
    /// Carved out of the training portion; empty when no validation was requested.
    pub validation: Dataset,
    pub test: Dataset,
}

/// Shuffles rows with `seed`, keeps `round(train_fraction·n)` for training and the
/// rest for testing, then moves `round(validation_fraction·n_train)` training rows
/// into validation.
pub fn split(
    data: &Dataset,
    train_fraction: f64,
    validation_fraction: f64,
    seed: u64,
) -> Result<Split> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(invalid(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    if !(0.0..1.0).contains(&validation_fraction) {
        return Err(invalid(format!(
            "validation fraction must lie in [0, 1), got {validation_fraction}"
        )));
    }
    let n = data.n();
    let n_train_all = (train_fraction * n as f64).round() as usize;
    let n_val = (validation_fraction * n_train_all as f64).round() as usize;
    if n_train_all == 0 || n_train_all == n {
        return Err(invalid(format!(
            "split of {n} rows at {train_fraction} leaves an empty part"
        )));
    }
    if n_val >= n_train_all || (validation_fraction > 0.0 && n_val == 0) {
        return Err(invalid(format!(
            "validation fraction {validation_fraction} of {n_train_all} training rows leaves an empty part"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train_all, test) = order.split_at(n_train_all);
    let (val, train) = train_all.split_at(n_val);
    Ok(Split {
        train: data.select(train),
        validation: data.select(val),
        test: data.select(test),
    })
}
