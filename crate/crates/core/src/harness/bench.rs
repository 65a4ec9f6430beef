//! Wall-clock comparison of the unlearning methods on one simultaneous deletion.

use std::hint::black_box;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::PointId;
use crate::error::{invalid, Result};
use crate::harness::config::{ExperimentConfig, Method};
use crate::harness::report::median;
use crate::harness::run::{prepare, Prepared};
use crate::models;
use crate::seeds::{derive_seed, SeedStream};
use crate::unlearn::{
    dvwu_newton_step, hessian_downdate, unit_weights, unlearn_gradient_ascent, unlearn_influence,
    weighted_gradient, InfluenceFactor, RoundSize,
};
use crate::valuation::{ValuationKind, ValueProfile, WeightMap};

#[derive(Clone, Debug, PartialEq)]
pub struct BenchOptions {
    /// Timed trials per method; the reported figure is their median.
    pub trials: usize,
    /// Each trial repeats the update until roughly this much time has passed.
    pub min_block: Duration,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            trials: 10,
            min_block: Duration::from_millis(20),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: Method,
    /// Median seconds per update over the trials.
    pub median_s: f64,
    pub min_s: f64,
    pub max_s: f64,
    pub trials: usize,
    /// Updates per timed trial.
    pub inner: usize,
}

type Update<'a> = Box<dyn Fn() -> Result<DVector<f64>> + 'a>;

/// Times one deletion of `deletion_size` points for each configured method, after
/// the initial model, its Hessian and any static data values are in place. Trials
/// of different methods are interleaved; one warm-up call per method is discarded.
pub fn run_efficiency_bench(
    cfg: &ExperimentConfig,
    deletion_size: usize,
    opts: &BenchOptions,
) -> Result<Vec<BenchRow>> {
    cfg.validate()?;
    if opts.trials == 0 {
        return Err(invalid("need at least one trial"));
    }
    let loaded = match cfg.load_manifest()? {
        Some(m) => Some(m.load()?),
        None => None,
    };
    let prep = prepare(cfg, loaded.as_ref(), 0)?;
    let n = prep.train.n();
    if deletion_size == 0 || deletion_size >= n {
        return Err(invalid(format!(
            "deletion size {deletion_size} must lie in 1..{n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(prep.seed, SeedStream::Deletion, 0));
    let ids: Vec<PointId> = sample(&mut rng, n, deletion_size)
        .into_iter()
        .map(|i| prep.train.id(i))
        .collect();
    let (remaining, deleted) = prep.train.remove(&ids)?;
    let size = RoundSize::uniform(n, deletion_size, 1)?;

    let loss = cfg.loss();
    let lambda = cfg.lambda;
    let model = models::train(&prep.train, lambda, loss, None, cfg.train_tol)?;
    let factor = InfluenceFactor::new(&model.hessian)?;
    let unit = unit_weights(&deleted);
    let weights: Vec<Option<WeightMap>> = cfg
        .methods
        .iter()
        .map(|m| static_weights(cfg, &prep, *m))
        .collect::<Result<_>>()?;

    let (w, h) = (&model.w, &model.hessian);
    let (deleted, remaining, unit, factor) = (&deleted, &remaining, &unit, &factor);
    let updates: Vec<Update> = cfg
        .methods
        .iter()
        .zip(&weights)
        .map(|(method, wm)| -> Update {
            let v = wm.as_ref().unwrap_or(unit);
            match method {
                Method::Retrain => Box::new(move || {
                    models::model::fit_parameters(
                        remaining,
                        lambda,
                        &loss,
                        None,
                        cfg.train_tol,
                        DVector::zeros(w.len()),
                    )
                }),
                Method::Influence => {
                    Box::new(move || unlearn_influence(w, factor, deleted, size, lambda, &loss))
                }
                Method::GradientA => Box::new(move || {
                    unlearn_gradient_ascent(
                        w,
                        deleted,
                        None,
                        cfg.ascent_step,
                        cfg.ascent_steps,
                        lambda,
                        &loss,
                    )
                }),
                Method::WeightedGa => Box::new(move || {
                    unlearn_gradient_ascent(
                        w,
                        deleted,
                        Some(v),
                        cfg.ascent_step,
                        cfg.ascent_steps,
                        lambda,
                        &loss,
                    )
                }),
                _ => Box::new(move || {
                    let g = weighted_gradient(w, deleted, v, lambda, &loss, None)?;
                    let ht = hessian_downdate(h, w, deleted, size, lambda, &loss)?;
                    dvwu_newton_step(w, &ht, &g, size, lambda)
                }),
            }
        })
        .collect();

    let mut inner = Vec::with_capacity(updates.len());
    for f in &updates {
        let clock = Instant::now();
        black_box(f()?);
        let once = clock.elapsed().max(Duration::from_nanos(100));
        let reps = (opts.min_block.as_secs_f64() / once.as_secs_f64()).ceil() as usize;
        inner.push(reps.clamp(1, 100_000));
    }
    let mut samples = vec![Vec::with_capacity(opts.trials); updates.len()];
    for _ in 0..opts.trials {
        for (k, f) in updates.iter().enumerate() {
            let clock = Instant::now();
            for _ in 0..inner[k] {
                black_box(f()?);
            }
            samples[k].push(clock.elapsed().as_secs_f64() / inner[k] as f64);
        }
    }
    Ok(cfg
        .methods
        .iter()
        .zip(samples)
        .zip(inner)
        .map(|((method, s), inner)| BenchRow {
            method: *method,
            median_s: median(&s).unwrap_or(0.0),
            min_s: s.iter().copied().fold(f64::INFINITY, f64::min),
            max_s: s.iter().copied().fold(0.0, f64::max),
            trials: s.len(),
            inner,
        })
        .collect())
}

fn static_weights(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    method: Method,
) -> Result<Option<WeightMap>> {
    let Some(vm) = method.valuation(cfg.knn_k) else {
        return Ok(None);
    };
    let utility = match vm.kind {
        ValuationKind::LeaveOneOut => &prep.validation,
        ValuationKind::KnnShapley => &prep.test,
    };
    let values = vm.compute(&prep.train, utility, cfg.lambda, cfg.loss())?;
    Ok(Some(
        ValueProfile::initial(values, cfg.alpha, cfg.zero_tol)?.weights,
    ))
}

pub fn write_bench_csv(rows: &[BenchRow], path: &std::path::Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| crate::error::Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["method", "median_s", "min_s", "max_s", "trials", "inner"])?;
    for r in rows {
        w.write_record([
            r.method.name().to_string(),
            r.median_s.to_string(),
            r.min_s.to_string(),
            r.max_s.to_string(),
            r.trials.to_string(),
            r.inner.to_string(),
        ])?;
    }
    w.flush().map_err(|e| crate::error::Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SynthConfig;
    use crate::harness::config::DataSource;
    use crate::models::Loss;

    #[test]
    fn times_every_method() {
        let data = DataSource::Synthetic(SynthConfig {
            n: 500,
            d_informative: 4,
            d_redundant: 1,
            positive_ratio: 0.5,
            noise_ratio: 0.05,
            cube_side: 2.0,
            seed: 0,
        });
        let cfg = ExperimentConfig::new(
            data,
            Loss::huberized_svm(2.0),
            0.01,
            Method::ALL.to_vec(),
            1,
            10,
        );
        let opts = BenchOptions {
            trials: 3,
            min_block: Duration::from_micros(200),
        };
        let rows = run_efficiency_bench(&cfg, 20, &opts).unwrap();
        assert_eq!(rows.len(), 9);
        assert!(rows
            .iter()
            .all(|r| r.median_s > 0.0 && r.min_s <= r.median_s && r.median_s <= r.max_s));
        assert!(run_efficiency_bench(&cfg, 0, &opts).is_err());
    }
}
