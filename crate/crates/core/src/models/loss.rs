//! Margin-based convex losses for linear binary classifiers.
//!
//! Every loss here is a function of the margin `u = y · wᵀx`, so the per-sample
//! gradient is `ℓ'(u) · y · x` and the per-sample Hessian is `ℓ''(u) · x xᵀ`
//! (labels are `±1`, so `y² = 1`).

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    /// `ln(1 + e^{-u})`.
    Logistic,
    /// Smoothed hinge: zero past margin 1, quadratic over a band of width `gamma`, linear below.
    HuberizedSvm { gamma: f64 },
    /// `½ (wᵀx − y)²`, i.e. `½ (u − 1)²`. Quadratic surrogate, used to check exactness of
    /// Newton-type updates. Its gradient is not globally bounded.
    Squared,
}

/// A loss together with the constants the certification bounds need.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Loss {
    pub kind: LossKind,
    /// Bound `C` on the per-sample gradient norm for inputs with `‖x‖ ≤ 1`.
    pub grad_bound: f64,
    /// Lipschitz constant `β` of the per-sample Hessian.
    pub hessian_lipschitz: f64,
}

pub const DEFAULT_HUBER_GAMMA: f64 = 2.0;

impl Loss {
    /// Logistic loss with `C = 1`, `β = 0.1`. The exact constant is
    /// `sup |σ''| = 1/(6√3) ≈ 0.0962` under `‖x‖ ≤ 1`.
    pub fn logistic() -> Self {
        Self {
            kind: LossKind::Logistic,
            grad_bound: 1.0,
            hessian_lipschitz: 0.1,
        }
    }

    /// Huberized SVM with `C = 1` and a surrogate `β = 0.5`; the true Hessian jumps at the
    /// two kinks, so no finite Lipschitz constant exists.
    pub fn huberized_svm(gamma: f64) -> Self {
        Self {
            kind: LossKind::HuberizedSvm { gamma },
            grad_bound: 1.0,
            hessian_lipschitz: 0.5,
        }
    }

    pub fn squared() -> Self {
        Self {
            kind: LossKind::Squared,
            grad_bound: 1.0,
            hessian_lipschitz: 0.0,
        }
    }

    pub fn with_constants(mut self, grad_bound: f64, hessian_lipschitz: f64) -> Self {
        self.grad_bound = grad_bound;
        self.hessian_lipschitz = hessian_lipschitz;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let LossKind::HuberizedSvm { gamma } = self.kind {
            if !(gamma > 0.0 && gamma.is_finite()) {
                return Err(invalid(format!(
                    "huberized SVM gamma must be positive, got {gamma}"
                )));
            }
        }
        if !(self.grad_bound > 0.0 && self.grad_bound.is_finite()) {
            return Err(invalid(format!(
                "gradient bound C must be positive, got {}",
                self.grad_bound
            )));
        }
        if !(self.hessian_lipschitz >= 0.0 && self.hessian_lipschitz.is_finite()) {
            return Err(invalid(format!(
                "hessian Lipschitz constant must be nonnegative, got {}",
                self.hessian_lipschitz
            )));
        }
        Ok(())
    }

    /// `ℓ(u)`.
    pub fn value(&self, u: f64) -> f64 {
        match self.kind {
            LossKind::Logistic => {
                if u > 0.0 {
                    (-u).exp().ln_1p()
                } else {
                    -u + u.exp().ln_1p()
                }
            }
            LossKind::HuberizedSvm { gamma } => {
                if u > 1.0 {
                    0.0
                } else if u > 1.0 - gamma {
                    (1.0 - u).powi(2) / (2.0 * gamma)
                } else {
                    1.0 - u - gamma / 2.0
                }
            }
            LossKind::Squared => 0.5 * (u - 1.0).powi(2),
        }
    }

    /// `dℓ/du`.
    pub fn derivative(&self, u: f64) -> f64 {
        match self.kind {
            LossKind::Logistic => -sigmoid(-u),
            LossKind::HuberizedSvm { gamma } => {
                if u > 1.0 {
                    0.0
                } else if u > 1.0 - gamma {
                    -(1.0 - u) / gamma
                } else {
                    -1.0
                }
            }
            LossKind::Squared => u - 1.0,
        }
    }

    /// `d²ℓ/du²`.
    pub fn second_derivative(&self, u: f64) -> f64 {
        match self.kind {
            LossKind::Logistic => sigmoid(u) * sigmoid(-u),
            LossKind::HuberizedSvm { gamma } => {
                if u > 1.0 || u <= 1.0 - gamma {
                    0.0
                } else {
                    1.0 / gamma
                }
            }
            LossKind::Squared => 1.0,
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_at_zero_margin() {
        let loss = Loss::logistic();
        assert!((loss.value(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(loss.derivative(0.0), -0.5);
        assert_eq!(loss.second_derivative(0.0), 0.25);
    }

    #[test]
    fn logistic_is_stable_for_large_margins() {
        let loss = Loss::logistic();
        assert!(loss.value(800.0).is_finite());
        assert!((loss.value(-800.0) - 800.0).abs() < 1e-9);
        assert!(loss.second_derivative(800.0) >= 0.0);
    }

    #[test]
    fn huber_zones() {
        let loss = Loss::huberized_svm(2.0);
        assert_eq!(loss.value(0.0), 0.25);
        assert_eq!(loss.value(1.5), 0.0);
        // linear zone: 1 - u - gamma/2
        assert_eq!(loss.value(-2.0), 2.0);
        assert_eq!(loss.derivative(-1.0), -1.0);
        assert_eq!(loss.derivative(2.0), 0.0);
        assert_eq!(loss.second_derivative(0.5), 0.5);
        assert_eq!(loss.second_derivative(-1.5), 0.0);
    }

    #[test]
    fn huber_is_continuous_at_kinks() {
        let loss = Loss::huberized_svm(2.0);
        for kink in [1.0, -1.0] {
            let (lo, hi) = (kink - 1e-9, kink + 1e-9);
            assert!((loss.value(lo) - loss.value(hi)).abs() < 1e-8);
            assert!((loss.derivative(lo) - loss.derivative(hi)).abs() < 1e-8);
        }
    }

    #[test]
    fn rejects_bad_constants() {
        assert!(Loss::huberized_svm(0.0).validate().is_err());
        assert!(Loss::logistic()
            .with_constants(0.0, 0.1)
            .validate()
            .is_err());
        assert!(Loss::logistic()
            .with_constants(1.0, -1.0)
            .validate()
            .is_err());
        assert!(Loss::logistic().validate().is_ok());
    }
}
