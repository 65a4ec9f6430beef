//! Continuous-deletion driver for the value-weighted Newton update with certification.

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, PointId};
use crate::error::{invalid, Error, Result};
use crate::models::{self, Loss, ModelState, DEFAULT_TRAIN_TOL};
use crate::seeds::{derive_seed, SeedStream};
use crate::unlearn::budget::{objective_perturb_setup, output_perturb, CertBudget};
use crate::unlearn::newton::{
    dvwu_newton_step, gradient_residual, hessian_downdate, weighted_gradient,
};
use crate::valuation::WeightMap;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    #[default]
    None,
    /// Fresh Gaussian noise added to the published parameters every round.
    Output,
    /// A fixed linear term `bᵀw` added to the objective before initial training.
    Objective,
}

/// Which residual bound a round is certified against.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdKind {
    /// Bound valid for arbitrary weights.
    #[default]
    General,
    /// Tighter bound that assumes every deleted weight is zero.
    AllZeroWeights,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub gradient: f64,
    pub hessian: f64,
    pub solve: f64,
    pub certify: f64,
    pub retrain: f64,
    pub valuation: f64,
}

impl PhaseTimings {
    pub fn total(&self) -> f64 {
        self.gradient + self.hessian + self.solve + self.certify + self.retrain + self.valuation
    }
}

/// Result of one deletion round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub round: usize,
    /// Parameters kept for the next round and used for prediction.
    pub w_internal: DVector<f64>,
    /// `w_internal` plus noise, in output-perturbation mode.
    pub w_published: Option<DVector<f64>>,
    /// Gradient residual of `w_internal` on the remaining data; `None` on rounds where
    /// the check was skipped. After a retrain this is the retrained model's residual.
    pub residual_norm: Option<f64>,
    /// Residual that triggered the retrain, when one happened.
    pub pre_retrain_residual: Option<f64>,
    pub threshold: f64,
    pub certified: bool,
    pub retrained: bool,
    /// The downdated Hessian failed the `λ/2` eigenvalue floor.
    pub ill_conditioned: bool,
    pub timings: PhaseTimings,
}

/// Outcome of [`certify_or_retrain`].
#[derive(Clone, Debug, PartialEq)]
pub struct Certification {
    pub w: DVector<f64>,
    pub residual: f64,
    pub pre_retrain_residual: Option<f64>,
    pub certified: bool,
    pub retrained: bool,
}

/// Keeps `w` when its residual on `data` is within `threshold`; otherwise retrains from
/// scratch on `data` (minimizing `L + bᵀw` when `b` is given).
pub fn certify_or_retrain(
    w: &DVector<f64>,
    threshold: f64,
    data: &Dataset,
    lambda: f64,
    loss: &Loss,
    b: Option<&DVector<f64>>,
    tol: f64,
) -> Result<Certification> {
    if !(threshold > 0.0) {
        return Err(invalid(format!(
            "certification threshold must be positive, got {threshold}"
        )));
    }
    let residual = gradient_residual(w, data, lambda, loss, b)?;
    if residual <= threshold {
        return Ok(Certification {
            w: w.clone(),
            residual,
            pre_retrain_residual: None,
            certified: true,
            retrained: false,
        });
    }
    retrain(data, lambda, loss, b, tol, threshold, Some(residual))
}

fn retrain(
    data: &Dataset,
    lambda: f64,
    loss: &Loss,
    b: Option<&DVector<f64>>,
    tol: f64,
    threshold: f64,
    before: Option<f64>,
) -> Result<Certification> {
    let w = models::model::fit_parameters(data, lambda, loss, b, tol, DVector::zeros(data.d()))?;
    let residual = gradient_residual(&w, data, lambda, loss, b)?;
    Ok(Certification {
        w,
        residual,
        pre_retrain_residual: before,
        certified: residual <= threshold,
        retrained: true,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SessionConfig {
    pub budget: CertBudget,
    pub perturbation: Perturbation,
    pub threshold: ThresholdKind,
    /// Check the residual every `check_every` rounds; 0 disables checking.
    pub check_every: usize,
    pub train_tol: f64,
    pub seed: u64,
}

impl SessionConfig {
    pub fn new(budget: CertBudget, perturbation: Perturbation, seed: u64) -> Self {
        Self {
            budget,
            perturbation,
            threshold: ThresholdKind::General,
            check_every: 1,
            train_tol: DEFAULT_TRAIN_TOL,
            seed,
        }
    }

    /// Certification threshold for round `t` under this config.
    pub fn threshold(&self, t: usize) -> Result<f64> {
        let b = &self.budget;
        match (self.perturbation, self.threshold) {
            (Perturbation::Objective, ThresholdKind::General) => b.epsilon2_prime(),
            (Perturbation::Objective, ThresholdKind::AllZeroWeights) => b.threshold0(b.rounds()),
            (_, ThresholdKind::General) => b.threshold1(t),
            (_, ThresholdKind::AllZeroWeights) => b.threshold0(t),
        }
    }
}

/// Running state of value-weighted Newton unlearning over a deletion schedule.
#[derive(Clone, Debug)]
pub struct UnlearningSession {
    cfg: SessionConfig,
    model: ModelState,
    data: Dataset,
    round: usize,
}

impl UnlearningSession {
    /// Trains the initial model on `data` (with a freshly drawn `b` in objective mode).
    pub fn start(data: Dataset, loss: Loss, cfg: SessionConfig) -> Result<Self> {
        let lambda = cfg.budget.lambda;
        let b = match cfg.perturbation {
            Perturbation::Objective => Some(objective_perturb_setup(
                &cfg.budget,
                data.d(),
                derive_seed(cfg.seed, SeedStream::ObjectiveNoise, 0),
            )?),
            _ => None,
        };
        let model = models::train(&data, lambda, loss, b, cfg.train_tol)?;
        Self::from_model(model, data, cfg)
    }

    /// Resumes from an already trained model whose Hessian was computed on `data`.
    pub fn from_model(model: ModelState, data: Dataset, cfg: SessionConfig) -> Result<Self> {
        cfg.budget.validate()?;
        if cfg.budget.n != data.n() {
            return Err(invalid(format!(
                "budget is for {} points but the dataset has {}",
                cfg.budget.n,
                data.n()
            )));
        }
        if cfg.budget.lambda != model.lambda {
            return Err(invalid("budget and model disagree on lambda"));
        }
        if (cfg.perturbation == Perturbation::Objective) != model.perturbation.is_some() {
            return Err(invalid(
                "objective perturbation requires a model trained with b, and only then",
            ));
        }
        data.check_dim(model.d())?;
        Ok(Self {
            cfg,
            model,
            data,
            round: 0,
        })
    }

    pub fn model(&self) -> &ModelState {
        &self.model
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    /// Deletes `ids` with the given weights and returns the round's outcome.
    pub fn step(&mut self, ids: &[PointId], weights: &WeightMap) -> Result<RoundOutcome> {
        let t = self.round + 1;
        let size = self.cfg.budget.round_size(t)?;
        if ids.len() != size.deleted {
            return Err(invalid(format!(
                "round {t} schedules {} deletions, request has {}",
                size.deleted,
                ids.len()
            )));
        }
        let (rest, deleted) = self.data.remove(ids)?;
        let lambda = self.model.lambda;
        let loss = self.model.loss;
        let b = self.model.perturbation.clone();
        let mut timings = PhaseTimings::default();

        let clock = Instant::now();
        let grad = weighted_gradient(&self.model.w, &deleted, weights, lambda, &loss, b.as_ref())?;
        timings.gradient = clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        let hessian = hessian_downdate(
            &self.model.hessian,
            &self.model.w,
            &deleted,
            size,
            lambda,
            &loss,
        )?;
        timings.hessian = clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        let (w_next, ill_conditioned) =
            match dvwu_newton_step(&self.model.w, &hessian, &grad, size, lambda) {
                Ok(w) => (w, false),
                Err(Error::IllConditionedHessian { .. }) => (self.model.w.clone(), true),
                Err(e) => return Err(e),
            };
        timings.solve = clock.elapsed().as_secs_f64();

        self.data = rest;
        self.round = t;
        let threshold = self.cfg.threshold(t)?;
        let check = ill_conditioned || (self.cfg.check_every > 0 && t % self.cfg.check_every == 0);

        let (mut residual_norm, mut pre_retrain_residual, mut certified, mut retrained) =
            (None, None, false, false);
        if check {
            let clock = Instant::now();
            let cert = if ill_conditioned {
                retrain(
                    &self.data,
                    lambda,
                    &loss,
                    b.as_ref(),
                    self.cfg.train_tol,
                    threshold,
                    None,
                )?
            } else {
                certify_or_retrain(
                    &w_next,
                    threshold,
                    &self.data,
                    lambda,
                    &loss,
                    b.as_ref(),
                    self.cfg.train_tol,
                )?
            };
            let elapsed = clock.elapsed().as_secs_f64();
            if cert.retrained {
                timings.retrain = elapsed;
                self.model.hessian = models::hessian_at(&cert.w, &self.data, lambda, &loss)?;
            } else {
                timings.certify = elapsed;
                self.model.hessian = hessian;
            }
            self.model.w = cert.w;
            residual_norm = Some(cert.residual);
            pre_retrain_residual = cert.pre_retrain_residual;
            certified = cert.certified;
            retrained = cert.retrained;
        } else {
            self.model.w = w_next;
            self.model.hessian = hessian;
        }

        let w_published = match self.cfg.perturbation {
            Perturbation::Output => Some(output_perturb(
                &self.model.w,
                &self.cfg.budget,
                t,
                derive_seed(self.cfg.seed, SeedStream::OutputNoise, t as u64),
            )?),
            _ => None,
        };

        Ok(RoundOutcome {
            round: t,
            w_internal: self.model.w.clone(),
            w_published,
            residual_norm,
            pre_retrain_residual,
            threshold,
            certified,
            retrained,
            ill_conditioned,
            timings,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::unlearn::budget::DeletionSchedule;
    use crate::unlearn::newton::unit_weights;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data(n: usize, d: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-0.3..0.3));
        let y = (0..n)
            .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
            .collect();
        Dataset::with_sequential_ids(x, y).unwrap()
    }

    fn cfg(n: usize, m: usize, t: usize, lambda: f64, p: Perturbation) -> SessionConfig {
        let loss = Loss::logistic();
        let budget = CertBudget::new(
            1.0,
            1e-4,
            loss.grad_bound,
            loss.hessian_lipschitz,
            lambda,
            n,
            DeletionSchedule::uniform(m, t).unwrap(),
        )
        .unwrap();
        SessionConfig::new(budget, p, 5)
    }

    #[test]
    fn certified_below_threshold() {
        let d = data(100, 3, 1);
        let w = models::train(&d, 0.1, Loss::logistic(), None, 1e-10)
            .unwrap()
            .w;
        let c = certify_or_retrain(&w, 1.0, &d, 0.1, &Loss::logistic(), None, 1e-8).unwrap();
        assert!(c.certified && !c.retrained);
        assert_eq!(c.w, w);
    }

    #[test]
    fn tiny_threshold_forces_retrain() {
        let d = data(100, 3, 2);
        let w = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let c = certify_or_retrain(&w, 1e-300, &d, 0.1, &Loss::logistic(), None, 1e-8).unwrap();
        assert!(c.retrained);
        assert!(c.residual <= 1e-8);
        assert!(c.pre_retrain_residual.unwrap() > 1e-300);
        assert!(certify_or_retrain(&w, 0.0, &d, 0.1, &Loss::logistic(), None, 1e-8).is_err());
    }

    #[test]
    fn objective_fallback_minimizes_perturbed_loss() {
        let d = data(100, 3, 3);
        let b = DVector::from_vec(vec![0.05, -0.02, 0.01]);
        let w = DVector::from_vec(vec![2.0, 0.0, 0.0]);
        let c = certify_or_retrain(&w, 1e-300, &d, 0.1, &Loss::logistic(), Some(&b), 1e-9).unwrap();
        assert!(c.retrained);
        let with_b = gradient_residual(&c.w, &d, 0.1, &Loss::logistic(), Some(&b)).unwrap();
        let without = gradient_residual(&c.w, &d, 0.1, &Loss::logistic(), None).unwrap();
        assert!(with_b <= 1e-9);
        assert!((without - b.norm()).abs() <= 1e-8);
    }

    #[test]
    fn zero_weights_keep_parameters_but_downdate_hessian() {
        let d = data(200, 3, 4);
        let mut s = UnlearningSession::start(
            d,
            Loss::logistic(),
            cfg(200, 10, 3, 0.01, Perturbation::None),
        )
        .unwrap();
        let (w0, h0) = (s.model().w.clone(), s.model().hessian.clone());
        let ids: Vec<PointId> = (0..10).map(PointId).collect();
        let zeros = ids.iter().map(|id| (*id, 0.0)).collect();
        let out = s.step(&ids, &zeros).unwrap();
        assert_eq!(out.w_internal, w0);
        assert!(!out.retrained);
        assert_ne!(s.model().hessian, h0);
        assert_eq!(s.data().n(), 190);
    }

    #[test]
    fn output_mode_publishes_noise_and_keeps_internal() {
        let d = data(200, 3, 5);
        let mut s = UnlearningSession::start(
            d,
            Loss::logistic(),
            cfg(200, 10, 2, 0.01, Perturbation::Output),
        )
        .unwrap();
        let ids: Vec<PointId> = (0..10).map(PointId).collect();
        let out = s
            .step(&ids, &unit_weights(&s.data().subset(&ids).unwrap()))
            .unwrap();
        let published = out.w_published.clone().unwrap();
        let noise = &published - &out.w_internal;
        let expect = crate::unlearn::budget::gaussian_noise(
            3,
            s.config().budget.output_noise_std(1).unwrap(),
            derive_seed(5, SeedStream::OutputNoise, 1),
        );
        assert_eq!(noise, expect);
        assert_eq!(s.model().w, out.w_internal);
        assert!(out.residual_norm.unwrap() <= out.threshold);
    }

    #[test]
    fn objective_mode_trains_with_b_and_reuses_it() {
        let d = data(200, 3, 6);
        let mut s = UnlearningSession::start(
            d,
            Loss::logistic(),
            cfg(200, 10, 2, 0.01, Perturbation::Objective),
        )
        .unwrap();
        let b = s.model().perturbation.clone().unwrap();
        assert!(
            gradient_residual(&s.model().w, s.data(), 0.01, &Loss::logistic(), Some(&b)).unwrap()
                <= 1e-8
        );
        let ids: Vec<PointId> = (0..10).map(PointId).collect();
        let out = s
            .step(&ids, &unit_weights(&s.data().subset(&ids).unwrap()))
            .unwrap();
        assert!(out.w_published.is_none());
        assert_eq!(out.threshold, s.config().budget.epsilon2_prime().unwrap());
        assert_eq!(s.model().perturbation.as_ref(), Some(&b));
    }

    #[test]
    fn check_cadence_skips_rounds() {
        let d = data(200, 3, 7);
        let mut c = cfg(200, 10, 4, 0.01, Perturbation::None);
        c.check_every = 2;
        let mut s = UnlearningSession::start(d, Loss::logistic(), c).unwrap();
        for t in 1..=4u64 {
            let ids: Vec<PointId> = ((t - 1) * 10..t * 10).map(PointId).collect();
            let out = s
                .step(&ids, &unit_weights(&s.data().subset(&ids).unwrap()))
                .unwrap();
            assert_eq!(out.residual_norm.is_some(), t % 2 == 0);
        }
    }

    #[test]
    fn wrong_deletion_count_is_rejected() {
        let d = data(100, 2, 8);
        let mut s = UnlearningSession::start(
            d,
            Loss::logistic(),
            cfg(100, 5, 2, 0.01, Perturbation::None),
        )
        .unwrap();
        let ids = vec![PointId(0)];
        assert!(s
            .step(&ids, &[(PointId(0), 1.0)].into_iter().collect())
            .is_err());
    }
}
