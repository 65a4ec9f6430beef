//! Continuous-deletion experiments over repetitions and methods.

use std::time::Instant;

use nalgebra::DVector;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{gen_synthetic, norm_scale, scale_rows, split, Standardizer};
use crate::dataset::{Dataset, PointId};
use crate::error::Result;
use crate::harness::config::{DeletionPolicy, ExperimentConfig, Method};
use crate::models::{self, evaluate, Metrics, ModelState};
use crate::seeds::{derive_seed, SeedStream};
use crate::unlearn::{
    gradient_residual, objective_perturb_setup, unit_weights, unlearn_gradient_ascent,
    unlearn_influence, InfluenceFactor, Perturbation, PhaseTimings, UnlearningSession,
};
use crate::valuation::{dynamic_update, knn_sv, ValuationMode, ValueProfile, WeightMap};

/// One round of one method in one repetition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub repetition: usize,
    pub method: Method,
    pub round: usize,
    pub remaining: usize,
    pub residual: Option<f64>,
    pub threshold: Option<f64>,
    pub certified: Option<bool>,
    pub retrained: bool,
    pub metrics: Metrics,
    /// Scores of the noisy published parameters, when requested.
    pub published: Option<Metrics>,
    pub timings: PhaseTimings,
}

impl RoundRecord {
    pub fn elapsed_ms(&self) -> f64 {
        self.timings.total() * 1e3
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub repetition: usize,
    /// `None` when the repetition failed before any method ran.
    pub method: Option<Method>,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    /// Ordered by repetition, then configured method order, then round.
    pub records: Vec<RoundRecord>,
    pub failures: Vec<RunFailure>,
}

impl ExperimentReport {
    pub fn empty(config: ExperimentConfig) -> Self {
        Self {
            config,
            records: Vec::new(),
            failures: Vec::new(),
        }
    }
}

/// Data, splits and deletion sequence shared by all methods in one repetition.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub repetition: usize,
    pub seed: u64,
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub deletions: Vec<Vec<PointId>>,
}

/// Seed of repetition `r`.
pub fn repetition_seed(base: u64, r: usize) -> u64 {
    base.wrapping_add(r as u64)
}

/// Generates or loads data, splits, standardizes with training statistics, bounds row
/// norms by the training maximum and draws the deletion sequence.
pub fn prepare(
    cfg: &ExperimentConfig,
    loaded: Option<&Dataset>,
    repetition: usize,
) -> Result<Prepared> {
    let seed = repetition_seed(cfg.seed, repetition);
    let full = match (cfg.data.synth_config()?, loaded) {
        (Some(mut sc), _) => {
            let data_seed = if cfg.fresh_data { seed } else { cfg.seed };
            sc.seed = derive_seed(data_seed, SeedStream::Data, 0);
            gen_synthetic(&sc)?
        }
        (None, Some(d)) => d.clone(),
        (None, None) => return Err(crate::error::invalid("dataset manifest was not loaded")),
    };
    let val_fraction = if cfg.uses_leave_one_out() {
        cfg.validation_fraction
    } else {
        0.0
    };
    let parts = split(
        &full,
        cfg.train_fraction,
        val_fraction,
        derive_seed(seed, SeedStream::Split, 0),
    )?;
    let standardizer = Standardizer::fit(&parts.train)?;
    let train = standardizer.apply(&parts.train)?;
    let scale = norm_scale(&train);
    let train = scale_rows(&train, scale)?;
    let validation = if parts.validation.is_empty() {
        parts.validation
    } else {
        scale_rows(&standardizer.apply(&parts.validation)?, scale)?
    };
    let test = scale_rows(&standardizer.apply(&parts.test)?, scale)?;

    let budget = cfg.budget(train.n())?;
    let negative: Option<Vec<bool>> = match cfg.deletion_policy {
        DeletionPolicy::Uniform => None,
        DeletionPolicy::ValueBiased { .. } => {
            let values = knn_sv(&train, &test, cfg.knn_k)?;
            Some(train.ids().iter().map(|id| values[id] < 0.0).collect())
        }
    };
    let mut remaining: Vec<(PointId, bool)> = train
        .ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (*id, negative.as_ref().is_some_and(|v| v[i])))
        .collect();
    let mut deletions = Vec::with_capacity(budget.rounds());
    for t in 1..=budget.rounds() {
        let m = budget.schedule.size(t);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, SeedStream::Deletion, t as u64));
        let picked: Vec<usize> = match cfg.deletion_policy {
            DeletionPolicy::Uniform => sample(&mut rng, remaining.len(), m).into_vec(),
            DeletionPolicy::ValueBiased { negative_share } => {
                let (neg, pos): (Vec<usize>, Vec<usize>) =
                    (0..remaining.len()).partition(|&i| remaining[i].1);
                let want = ((negative_share * m as f64).round() as usize).min(neg.len());
                let want = want.max(m.saturating_sub(pos.len()));
                let mut idx: Vec<usize> = sample(&mut rng, neg.len(), want)
                    .into_iter()
                    .map(|i| neg[i])
                    .collect();
                idx.extend(
                    sample(&mut rng, pos.len(), m - want)
                        .into_iter()
                        .map(|i| pos[i]),
                );
                idx
            }
        };
        let mut take = vec![false; remaining.len()];
        for &i in &picked {
            take[i] = true;
        }
        deletions.push(picked.iter().map(|&i| remaining[i].0).collect());
        let mut k = 0;
        remaining.retain(|_| {
            k += 1;
            !take[k - 1]
        });
    }
    Ok(Prepared {
        repetition,
        seed,
        train,
        validation,
        test,
        deletions,
    })
}

/// Runs every configured method over every repetition. Repetitions run concurrently;
/// a failing repetition or method is recorded and the others continue.
pub fn run_continuous_deletion(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let loaded = match cfg.load_manifest()? {
        Some(m) => Some(m.load()?),
        None => None,
    };
    let outcomes: Vec<(Vec<RoundRecord>, Vec<RunFailure>)> = (0..cfg.repetitions)
        .into_par_iter()
        .map(|r| run_repetition(cfg, loaded.as_ref(), r))
        .collect();
    let mut report = ExperimentReport::empty(cfg.clone());
    for (records, failures) in outcomes {
        report.records.extend(records);
        report.failures.extend(failures);
    }
    Ok(report)
}

fn run_repetition(
    cfg: &ExperimentConfig,
    loaded: Option<&Dataset>,
    r: usize,
) -> (Vec<RoundRecord>, Vec<RunFailure>) {
    let prep = match prepare(cfg, loaded, r) {
        Ok(p) => p,
        Err(e) => {
            log::warn!("repetition {r} failed during setup: {e}");
            return (
                Vec::new(),
                vec![RunFailure {
                    repetition: r,
                    method: None,
                    message: e.to_string(),
                }],
            );
        }
    };
    let initial = match initial_models(cfg, &prep) {
        Ok(m) => m,
        Err(e) => {
            return (
                Vec::new(),
                vec![RunFailure {
                    repetition: r,
                    method: None,
                    message: e.to_string(),
                }],
            )
        }
    };
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for &method in &cfg.methods {
        match run_method(cfg, &prep, &initial, method) {
            Ok(rs) => records.extend(rs),
            Err(e) => {
                log::warn!("repetition {r}, {method}: {e}");
                failures.push(RunFailure {
                    repetition: r,
                    method: Some(method),
                    message: e.to_string(),
                });
            }
        }
    }
    (records, failures)
}

/// Initial models on the full training set: without `b`, and with `b` when objective
/// perturbation is configured.
#[derive(Clone, Debug)]
pub struct InitialModels {
    pub plain: ModelState,
    pub perturbed: Option<ModelState>,
}

pub fn initial_models(cfg: &ExperimentConfig, prep: &Prepared) -> Result<InitialModels> {
    let loss = cfg.loss();
    let plain = models::train(&prep.train, cfg.lambda, loss, None, cfg.train_tol)?;
    let perturbed = if cfg.perturbation == Perturbation::Objective
        && cfg.methods.iter().any(|m| m.is_newton_family())
    {
        let budget = cfg.budget(prep.train.n())?;
        let b = objective_perturb_setup(
            &budget,
            prep.train.d(),
            derive_seed(prep.seed, SeedStream::ObjectiveNoise, 0),
        )?;
        Some(models::train_from(
            &prep.train,
            cfg.lambda,
            loss,
            Some(b),
            cfg.train_tol,
            plain.w.clone(),
        )?)
    } else {
        None
    };
    Ok(InitialModels { plain, perturbed })
}

fn initial_profile(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    method: Method,
) -> Result<Option<(ValueProfile, f64)>> {
    let Some(vm) = method.valuation(cfg.knn_k) else {
        return Ok(None);
    };
    let clock = Instant::now();
    let utility = utility_set(prep, &vm);
    let values = vm.compute(&prep.train, utility, cfg.lambda, cfg.loss())?;
    let profile = ValueProfile::initial(values, cfg.alpha, cfg.zero_tol)?;
    Ok(Some((profile, clock.elapsed().as_secs_f64())))
}

fn utility_set<'a>(prep: &'a Prepared, vm: &crate::valuation::ValuationMethod) -> &'a Dataset {
    match vm.kind {
        crate::valuation::ValuationKind::LeaveOneOut => &prep.validation,
        crate::valuation::ValuationKind::KnnShapley => &prep.test,
    }
}

fn deleted_weights(profile: Option<&ValueProfile>, deleted: &Dataset) -> Result<WeightMap> {
    match profile {
        None => Ok(unit_weights(deleted)),
        Some(p) => deleted
            .ids()
            .iter()
            .map(|id| {
                p.weight(*id)
                    .map(|v| (*id, v))
                    .ok_or_else(|| crate::error::invalid(format!("no weight for point {id}")))
            })
            .collect(),
    }
}

/// Runs one method over all rounds of a prepared repetition.
pub fn run_method(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    initial: &InitialModels,
    method: Method,
) -> Result<Vec<RoundRecord>> {
    let loss = cfg.loss();
    let lambda = cfg.lambda;
    let costs = cfg.costs();
    let budget = cfg.budget(prep.train.n())?;
    let session_cfg = cfg.session_config(budget.clone(), prep.seed);
    let mut profile = initial_profile(cfg, prep, method)?.map(|(p, _)| p);
    let mut records = Vec::with_capacity(prep.deletions.len());

    if method.is_newton_family() {
        let model = match (&initial.perturbed, cfg.perturbation) {
            (Some(m), Perturbation::Objective) => m.clone(),
            _ => initial.plain.clone(),
        };
        let mut session = UnlearningSession::from_model(model, prep.train.clone(), session_cfg)?;
        let vm = method.valuation(cfg.knn_k);
        for ids in &prep.deletions {
            let deleted = session.data().subset(ids)?;
            let weights = deleted_weights(profile.as_ref(), &deleted)?;
            let out = session.step(ids, &weights)?;
            let mut timings = out.timings.clone();
            if let (Some(p), Some(vm)) = (profile.as_ref(), vm) {
                if vm.mode == ValuationMode::Dynamic && out.round < budget.rounds() {
                    let clock = Instant::now();
                    let next = dynamic_update(
                        p,
                        session.data(),
                        utility_set(prep, &vm),
                        &vm,
                        lambda,
                        loss,
                    )?;
                    timings.valuation = clock.elapsed().as_secs_f64();
                    profile = Some(next);
                }
            }
            let published = match (&out.w_published, cfg.score_published) {
                (Some(w), true) => Some(evaluate(w, &prep.test, costs)?),
                _ => None,
            };
            let checked = out.residual_norm.is_some();
            records.push(RoundRecord {
                repetition: prep.repetition,
                method,
                round: out.round,
                remaining: session.data().n(),
                residual: out.residual_norm,
                threshold: Some(out.threshold),
                certified: checked.then_some(out.certified),
                retrained: out.retrained,
                metrics: evaluate(&out.w_internal, &prep.test, costs)?,
                published,
                timings,
            });
        }
        return Ok(records);
    }

    let mut data = prep.train.clone();
    let mut w: DVector<f64> = initial.plain.w.clone();
    let factor = match method {
        Method::Influence => Some(InfluenceFactor::new(&initial.plain.hessian)?),
        _ => None,
    };
    for (idx, ids) in prep.deletions.iter().enumerate() {
        let t = idx + 1;
        let size = budget.round_size(t)?;
        let (rest, deleted) = data.remove(ids)?;
        data = rest;
        let mut timings = PhaseTimings::default();
        let clock = Instant::now();
        w = match method {
            Method::Retrain => models::model::fit_parameters(
                &data,
                lambda,
                &loss,
                None,
                cfg.train_tol,
                DVector::zeros(data.d()),
            )?,
            Method::Influence => unlearn_influence(
                &w,
                factor.as_ref().expect("factor"),
                &deleted,
                size,
                lambda,
                &loss,
            )?,
            Method::GradientA => unlearn_gradient_ascent(
                &w,
                &deleted,
                None,
                cfg.ascent_step,
                cfg.ascent_steps,
                lambda,
                &loss,
            )?,
            Method::WeightedGa => {
                let weights = deleted_weights(profile.as_ref(), &deleted)?;
                unlearn_gradient_ascent(
                    &w,
                    &deleted,
                    Some(&weights),
                    cfg.ascent_step,
                    cfg.ascent_steps,
                    lambda,
                    &loss,
                )?
            }
            _ => unreachable!("newton-family methods are handled above"),
        };
        let elapsed = clock.elapsed().as_secs_f64();
        match method {
            Method::Retrain => timings.retrain = elapsed,
            _ => timings.gradient = elapsed,
        }

        let (residual, threshold, certified) = if cfg.check_every > 0 && t % cfg.check_every == 0 {
            let clock = Instant::now();
            let g = gradient_residual(&w, &data, lambda, &loss, None)?;
            timings.certify = clock.elapsed().as_secs_f64();
            if method == Method::Retrain {
                (Some(g), None, None)
            } else {
                let th = session_cfg.threshold(t)?;
                (Some(g), Some(th), Some(g <= th))
            }
        } else {
            (None, None, None)
        };
        records.push(RoundRecord {
            repetition: prep.repetition,
            method,
            round: t,
            remaining: data.n(),
            residual,
            threshold,
            certified,
            retrained: false,
            metrics: evaluate(&w, &prep.test, costs)?,
            published: None,
            timings,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SynthConfig;
    use crate::harness::config::DataSource;
    use crate::models::Loss;
    use std::collections::BTreeSet;

    fn cfg(methods: Vec<Method>) -> ExperimentConfig {
        let data = DataSource::Synthetic(SynthConfig {
            n: 600,
            d_informative: 6,
            d_redundant: 2,
            positive_ratio: 0.5,
            noise_ratio: 0.05,
            cube_side: 2.0,
            seed: 0,
        });
        let mut c = ExperimentConfig::new(data, Loss::logistic(), 0.01, methods, 4, 20);
        c.repetitions = 2;
        c.seed = 11;
        c
    }

    #[test]
    fn deletions_are_disjoint_and_sized() {
        let c = cfg(vec![Method::Newton]);
        let p = prepare(&c, None, 0).unwrap();
        assert_eq!(p.train.n(), 420);
        assert!(p.validation.is_empty());
        assert_eq!(p.test.n(), 180);
        assert!(p.train.max_row_norm() <= 1.0 + 1e-12);
        let all: Vec<PointId> = p.deletions.iter().flatten().copied().collect();
        assert_eq!(all.len(), 80);
        assert_eq!(all.iter().collect::<BTreeSet<_>>().len(), 80);
        let train_ids: BTreeSet<_> = p.train.ids().iter().collect();
        assert!(all.iter().all(|id| train_ids.contains(id)));
        let again = prepare(&c, None, 0).unwrap();
        assert_eq!(again.deletions, p.deletions);
        assert_ne!(prepare(&c, None, 1).unwrap().deletions, p.deletions);
    }

    #[test]
    fn loo_methods_carve_validation() {
        let c = cfg(vec![Method::DvwuL]);
        let p = prepare(&c, None, 0).unwrap();
        assert_eq!(p.validation.n(), 42);
        assert_eq!(p.train.n(), 378);
    }

    #[test]
    fn value_biased_policy_prefers_negative_points() {
        let mut c = cfg(vec![Method::Newton]);
        c.deletion_policy = DeletionPolicy::ValueBiased {
            negative_share: 1.0,
        };
        let p = prepare(&c, None, 0).unwrap();
        let values = knn_sv(&p.train, &p.test, c.knn_k).unwrap();
        let negatives = p.deletions[0].iter().filter(|id| values[id] < 0.0).count();
        assert!(negatives >= 15, "{negatives}");
    }

    #[test]
    fn every_method_runs() {
        let c = cfg(Method::ALL.to_vec());
        let rep = run_continuous_deletion(&c).unwrap();
        assert!(rep.failures.is_empty(), "{:?}", rep.failures);
        assert_eq!(rep.records.len(), 2 * 9 * 4);
        for r in &rep.records {
            assert_eq!(r.remaining, 420 - 42 - 20 * r.round);
            assert!((0.0..=1.0).contains(&r.metrics.accuracy));
            if r.method.is_newton_family() {
                assert!(r.residual.is_some() && r.threshold.is_some());
            }
        }
    }

    #[test]
    fn failures_are_recorded_per_repetition() {
        let mut c = cfg(vec![Method::Newton]);
        c.train_tol = 1e-300;
        let rep = run_continuous_deletion(&c).unwrap();
        assert!(rep.records.is_empty());
        assert_eq!(rep.failures.len(), 2);
        assert_eq!(rep.failures[1].repetition, 1);
    }

    #[test]
    fn runs_are_deterministic() {
        let mut c = cfg(vec![Method::DvwuK, Method::Retrain]);
        c.perturbation = Perturbation::Output;
        let mut a = run_continuous_deletion(&c).unwrap().records;
        let mut b = run_continuous_deletion(&c).unwrap().records;
        for r in a.iter_mut().chain(b.iter_mut()) {
            r.timings = PhaseTimings::default();
        }
        assert_eq!(a, b);
    }
}
