//! Certification budget: deletion schedule, the residual and parameter-gap bounds, and
//! Gaussian noise calibrated to them.
//!
//! With `S_t` points deleted after round `t`, `r_t = n − S_t` remaining and `m` the
//! per-round size, the parameter-gap bound is
//!
//! ```text
//! ε₁′(t) = 4βC²·m·S_t / (λ³ r_t²) + 4C·S_t / (λ r_t)
//! ```
//!
//! and the gradient-residual bound is `λ·ε₁′(t)`. For uniform rounds `S_t = t·m`. When
//! round sizes vary, `m` is the largest size seen up to round `t`.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Per-round deletion sizes `m_1, …, m_T`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeletionSchedule {
    sizes: Vec<usize>,
}

impl DeletionSchedule {
    pub fn uniform(m: usize, rounds: usize) -> Result<Self> {
        Self::from_sizes(vec![m; rounds])
    }

    pub fn from_sizes(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(invalid("deletion schedule needs at least one round"));
        }
        if sizes.contains(&0) {
            return Err(invalid(
                "every deletion round must remove at least one point",
            ));
        }
        Ok(Self { sizes })
    }

    pub fn rounds(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// `m_t` for 1-based round `t`.
    pub fn size(&self, t: usize) -> usize {
        self.sizes[t - 1]
    }

    /// Total deleted after round `t` (`S_t`).
    pub fn cumulative(&self, t: usize) -> usize {
        self.sizes[..t].iter().sum()
    }

    fn max_size_through(&self, t: usize) -> usize {
        self.sizes[..t].iter().copied().max().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.sizes.iter().sum()
    }
}

/// Geometry of one deletion round, as used by the Newton update and Hessian downdate.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct RoundSize {
    pub round: usize,
    /// Points deleted in this round (`m_t`).
    pub deleted: usize,
    /// Points left after this round (`n − S_t`).
    pub remaining: usize,
}

impl RoundSize {
    /// Round `t` of a uniform schedule over `n` initial points.
    pub fn uniform(n: usize, m: usize, t: usize) -> Result<Self> {
        let remaining = n as i64 - (t * m) as i64;
        if remaining < 1 {
            return Err(Error::BudgetExhausted {
                round: t,
                remaining,
            });
        }
        Ok(Self {
            round: t,
            deleted: m,
            remaining: remaining as usize,
        })
    }

    /// `m_t / (n − S_t)`.
    pub fn step_factor(&self) -> f64 {
        self.deleted as f64 / self.remaining as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertBudget {
    pub epsilon: f64,
    pub delta: f64,
    /// Per-sample gradient bound `C`.
    pub grad_bound: f64,
    /// Per-sample Hessian Lipschitz constant `β`.
    pub hessian_lipschitz: f64,
    pub lambda: f64,
    /// Initial training-set size.
    pub n: usize,
    pub schedule: DeletionSchedule,
}

impl CertBudget {
    pub fn new(
        epsilon: f64,
        delta: f64,
        grad_bound: f64,
        hessian_lipschitz: f64,
        lambda: f64,
        n: usize,
        schedule: DeletionSchedule,
    ) -> Result<Self> {
        let budget = Self {
            epsilon,
            delta,
            grad_bound,
            hessian_lipschitz,
            lambda,
            n,
            schedule,
        };
        budget.validate()?;
        Ok(budget)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(invalid(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if !(self.grad_bound > 0.0 && self.hessian_lipschitz >= 0.0) {
            return Err(invalid("need C > 0 and beta >= 0"));
        }
        if !(self.lambda > 0.0) {
            return Err(invalid(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        let remaining = self.n as i64 - self.schedule.total() as i64;
        if remaining < 1 {
            return Err(Error::BudgetExhausted {
                round: self.schedule.rounds(),
                remaining,
            });
        }
        Ok(())
    }

    pub fn rounds(&self) -> usize {
        self.schedule.rounds()
    }

    pub fn round_size(&self, t: usize) -> Result<RoundSize> {
        if t == 0 || t > self.rounds() {
            return Err(invalid(format!("round {t} outside 1..={}", self.rounds())));
        }
        let remaining = self.n as i64 - self.schedule.cumulative(t) as i64;
        if remaining < 1 {
            return Err(Error::BudgetExhausted {
                round: t,
                remaining,
            });
        }
        Ok(RoundSize {
            round: t,
            deleted: self.schedule.size(t),
            remaining: remaining as usize,
        })
    }

    /// `(m, S_t, r_t)` with `m` the largest round size through `t`.
    fn terms(&self, t: usize) -> Result<(f64, f64, f64)> {
        let size = self.round_size(t)?;
        Ok((
            self.schedule.max_size_through(t) as f64,
            self.schedule.cumulative(t) as f64,
            size.remaining as f64,
        ))
    }

    /// Parameter-gap bound `ε₁′(t)` between the unlearned and retrained optimum.
    pub fn epsilon1_prime(&self, t: usize) -> Result<f64> {
        let (m, s, r) = self.terms(t)?;
        let (c, beta, lambda) = (self.grad_bound, self.hessian_lipschitz, self.lambda);
        Ok(4.0 * beta * c * c * m * s / (lambda.powi(3) * r * r) + 4.0 * c * s / (lambda * r))
    }

    /// Gradient-residual bound at the horizon, `ε₂′ = λ·ε₁′(T)`, expanded.
    pub fn epsilon2_prime(&self) -> Result<f64> {
        let (m, s, r) = self.terms(self.rounds())?;
        let (c, beta, lambda) = (self.grad_bound, self.hessian_lipschitz, self.lambda);
        Ok(4.0 * beta * c * c * m * s / (lambda * lambda * r * r) + 4.0 * c * s / r)
    }

    /// Gradient-residual bound after round `t`: `λ·ε₁′(t)` ("Threshold 1").
    pub fn threshold1(&self, t: usize) -> Result<f64> {
        Ok(self.lambda * self.epsilon1_prime(t)?)
    }

    /// Residual bound when every deleted point has weight 0: `2C·S_t / r_t` ("Threshold 0").
    pub fn threshold0(&self, t: usize) -> Result<f64> {
        let (_, s, r) = self.terms(t)?;
        Ok(2.0 * self.grad_bound * s / r)
    }

    /// Noise scale for output perturbation at round `t`: `c·ε₁′(t)/ε`.
    pub fn output_noise_std(&self, t: usize) -> Result<f64> {
        Ok(gauss_constant(self.delta)? * self.epsilon1_prime(t)? / self.epsilon)
    }

    /// Noise scale for objective perturbation: `c·ε₂′/ε`.
    pub fn objective_noise_std(&self) -> Result<f64> {
        Ok(gauss_constant(self.delta)? * self.epsilon2_prime()? / self.epsilon)
    }
}

/// `c = √(2 ln(1.25/δ))`.
pub fn gauss_constant(delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta <= 1.25) {
        return Err(invalid(format!("delta must lie in (0, 1.25], got {delta}")));
    }
    Ok((2.0 * (1.25 / delta).ln()).max(0.0).sqrt())
}

/// `d` i.i.d. `N(0, std²)` draws from a ChaCha stream seeded with `seed`.
pub fn gaussian_noise(d: usize, std: f64, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DVector::from_iterator(
        d,
        (0..d).map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            std * z
        }),
    )
}

/// Publishes `w_t + b^t` with `b^t ~ N(0, (c·ε₁′(t)/ε)² I)`; `w_t` is left untouched.
pub fn output_perturb(
    w: &DVector<f64>,
    budget: &CertBudget,
    t: usize,
    seed: u64,
) -> Result<DVector<f64>> {
    let std = budget.output_noise_std(t)?;
    Ok(w + gaussian_noise(w.len(), std, seed))
}

/// Draws the objective-perturbation vector `b ~ N(0, (c·ε₂′/ε)² I_d)`.
pub fn objective_perturb_setup(budget: &CertBudget, d: usize, seed: u64) -> Result<DVector<f64>> {
    let std = budget.objective_noise_std()?;
    Ok(gaussian_noise(d, std, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn large_scale(rounds: usize) -> CertBudget {
        CertBudget::new(
            1.0,
            1e-4,
            1.0,
            0.1,
            0.001,
            21000,
            DeletionSchedule::uniform(1000, rounds).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn gauss_constant_values() {
        assert!((gauss_constant(1e-4).unwrap() - (2.0 * 12500f64.ln()).sqrt()).abs() < 1e-15);
        assert!((gauss_constant(1e-4).unwrap() - 4.34361).abs() < 1e-5);
        assert_eq!(gauss_constant(1.25).unwrap(), 0.0);
        assert!((gauss_constant(0.05).unwrap() - 2.53727).abs() < 1e-5);
        assert!(gauss_constant(0.0).is_err());
        assert!(gauss_constant(-1.0).is_err());
        assert!(gauss_constant(0.01).unwrap() > gauss_constant(0.02).unwrap());
    }

    #[test]
    fn epsilon1_closed_form() {
        let b = large_scale(15);
        let (beta, c, m, lambda, n): (f64, f64, f64, f64, f64) = (0.1, 1.0, 1000.0, 0.001, 21000.0);
        let t = 1.0;
        let expect = 4.0 * beta * c.powi(2) * m.powi(2) * t
            / (lambda.powi(3) * (n - t * m).powi(2))
            + 4.0 * c * m * t / (lambda * (n - t * m));
        let got = b.epsilon1_prime(1).unwrap();
        assert!(((got - expect) / expect).abs() <= 1e-12);
    }

    #[test]
    fn epsilon2_closed_form() {
        let b = large_scale(15);
        let (beta, c, m, lambda, n, t): (f64, f64, f64, f64, f64, f64) =
            (0.1, 1.0, 1000.0, 0.001, 21000.0, 15.0);
        let expect = 4.0 * beta * c.powi(2) * m.powi(2) * t
            / (lambda.powi(2) * (n - t * m).powi(2))
            + 4.0 * c * m * t / (n - t * m);
        let got = b.epsilon2_prime().unwrap();
        assert!(((got - expect) / expect).abs() <= 1e-12);
        let via_e1 = b.lambda * b.epsilon1_prime(15).unwrap();
        assert!(((got - via_e1) / got).abs() <= 1e-12);
    }

    #[test]
    fn beta_zero_drops_first_term() {
        let mut b = large_scale(3);
        b.hessian_lipschitz = 0.0;
        let e1 = b.epsilon1_prime(2).unwrap();
        assert!((e1 - 4.0 * 2000.0 / (0.001 * 19000.0)).abs() < 1e-9);
        let e2 = b.epsilon2_prime().unwrap();
        assert!((e2 - 4.0 * 3000.0 / 18000.0).abs() < 1e-12);
    }

    #[test]
    fn epsilon1_increases_with_rounds() {
        let b = large_scale(15);
        for t in 1..15 {
            assert!(b.epsilon1_prime(t + 1).unwrap() > b.epsilon1_prime(t).unwrap());
        }
    }

    #[test]
    fn threshold0_values_and_ordering() {
        let b = large_scale(15);
        assert!((b.threshold0(1).unwrap() - 0.1).abs() < 1e-15);
        assert!((b.threshold0(15).unwrap() - 5.0).abs() < 1e-12);
        for t in 1..=15 {
            assert!(b.threshold0(t).unwrap() <= b.threshold1(t).unwrap());
        }
    }

    #[test]
    fn exhausted_budget_is_rejected() {
        let s = DeletionSchedule::uniform(10, 10).unwrap();
        assert!(matches!(
            CertBudget::new(1.0, 1e-4, 1.0, 0.1, 0.01, 100, s),
            Err(Error::BudgetExhausted { .. })
        ));
        assert!(RoundSize::uniform(100, 50, 2).is_err());
        let b = large_scale(15);
        assert!(b.epsilon1_prime(16).is_err());
        assert!(b.epsilon1_prime(0).is_err());
    }

    #[test]
    fn invalid_privacy_parameters() {
        let s = DeletionSchedule::uniform(1, 1).unwrap();
        assert!(CertBudget::new(0.0, 1e-4, 1.0, 0.1, 0.01, 10, s.clone()).is_err());
        assert!(CertBudget::new(1.0, 1.0, 1.0, 0.1, 0.01, 10, s).is_err());
    }

    #[test]
    fn non_uniform_schedule_uses_running_sum() {
        let uniform = CertBudget::new(
            1.0,
            1e-4,
            1.0,
            0.1,
            0.01,
            1000,
            DeletionSchedule::uniform(50, 4).unwrap(),
        )
        .unwrap();
        let same = CertBudget::new(
            1.0,
            1e-4,
            1.0,
            0.1,
            0.01,
            1000,
            DeletionSchedule::from_sizes(vec![50; 4]).unwrap(),
        )
        .unwrap();
        assert_eq!(
            uniform.epsilon1_prime(3).unwrap(),
            same.epsilon1_prime(3).unwrap()
        );
        let mixed = CertBudget::new(
            1.0,
            1e-4,
            1.0,
            0.1,
            0.01,
            1000,
            DeletionSchedule::from_sizes(vec![10, 90, 20]).unwrap(),
        )
        .unwrap();
        assert!((mixed.threshold0(2).unwrap() - 2.0 * 100.0 / 900.0).abs() < 1e-15);
        assert_eq!(
            mixed.round_size(2).unwrap(),
            RoundSize {
                round: 2,
                deleted: 90,
                remaining: 900
            }
        );
        assert!(DeletionSchedule::from_sizes(vec![3, 0]).is_err());
    }

    #[test]
    fn noise_is_seed_deterministic() {
        let b = large_scale(15);
        let w = DVector::from_vec(vec![0.1, 0.2, 0.3]);
        assert_eq!(
            output_perturb(&w, &b, 2, 7).unwrap(),
            output_perturb(&w, &b, 2, 7).unwrap()
        );
        assert_ne!(
            output_perturb(&w, &b, 2, 7).unwrap(),
            output_perturb(&w, &b, 2, 8).unwrap()
        );
        assert_eq!(objective_perturb_setup(&b, 0, 1).unwrap().len(), 0);
        assert_eq!(
            objective_perturb_setup(&b, 5, 3).unwrap(),
            objective_perturb_setup(&b, 5, 3).unwrap()
        );
    }

    #[test]
    fn infinite_epsilon_means_no_noise() {
        let mut b = large_scale(2);
        b.epsilon = f64::INFINITY;
        let w = DVector::from_vec(vec![0.5, -0.25]);
        assert_eq!(output_perturb(&w, &b, 1, 3).unwrap(), w);
    }
}
