use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{invalid, Result};

/// Classification quality on a held-out set, positive class `+1`.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub misclassification_cost: f64,
}

/// Per-error costs for the misclassification-cost metric.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    pub false_positive: f64,
    pub false_negative: f64,
}

impl Default for CostMatrix {
    fn default() -> Self {
        Self {
            false_positive: 1.0,
            false_negative: 1.0,
        }
    }
}

/// Predicts `sign(wᵀx)`, with `wᵀx = 0` mapped to `+1`.
pub fn predict(w: &DVector<f64>, data: &Dataset) -> Result<Vec<f64>> {
    data.check_dim(w.len())?;
    let scores = data.features() * w;
    Ok(scores
        .iter()
        .map(|&s| if s >= 0.0 { 1.0 } else { -1.0 })
        .collect())
}

/// Accuracy, precision, recall and average misclassification cost of `w` on `test`.
///
/// Precision (recall) is reported as 0 when nothing is predicted (present) positive.
pub fn evaluate(w: &DVector<f64>, test: &Dataset, costs: CostMatrix) -> Result<Metrics> {
    test.check_nonempty("test")?;
    if !(costs.false_positive >= 0.0 && costs.false_negative >= 0.0) {
        return Err(invalid("misclassification costs must be nonnegative"));
    }
    let pred = predict(w, test)?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &y) in pred.iter().zip(test.labels()) {
        match (p > 0.0, y > 0.0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let n = test.n() as f64;
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    Ok(Metrics {
        accuracy: (tp + tn) as f64 / n,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        misclassification_cost: (costs.false_positive * fp as f64
            + costs.false_negative * fn_ as f64)
            / n,
    })
}
