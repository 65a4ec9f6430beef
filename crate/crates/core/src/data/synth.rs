//! Gaussian-cluster synthetic classification data.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{invalid, Error, Result};

pub const DEFAULT_CUBE_SIDE: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub d_informative: usize,
    pub d_redundant: usize,
    pub positive_ratio: f64,
    pub noise_ratio: f64,
    #[serde(default = "default_cube_side")]
    pub cube_side: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_cube_side() -> f64 {
    DEFAULT_CUBE_SIDE
}

impl SynthConfig {
    /// Named presets `sy1`..`sy6`; two of the `d` columns are redundant.
    pub fn preset(name: &str) -> Result<Self> {
        let (n, d, pos, noise) = match name {
            "sy1" => (30000, 20, 0.5, 0.05),
            "sy2" => (30000, 20, 0.5, 0.15),
            "sy3" => (30000, 20, 0.5, 0.25),
            "sy4" => (30000, 40, 0.5, 0.05),
            "sy5" => (60000, 40, 0.5, 0.05),
            "sy6" => (30000, 20, 0.25, 0.05),
            other => return Err(invalid(format!("unknown synthetic preset {other:?}"))),
        };
        Ok(Self {
            n,
            d_informative: d - 2,
            d_redundant: 2,
            positive_ratio: pos,
            noise_ratio: noise,
            cube_side: DEFAULT_CUBE_SIDE,
            seed: 0,
        })
    }

    pub fn d(&self) -> usize {
        self.d_informative + self.d_redundant
    }

    pub fn positives(&self) -> usize {
        (self.positive_ratio * self.n as f64).round() as usize
    }

    pub fn flips(&self) -> usize {
        (self.noise_ratio * self.n as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(invalid("synthetic n must be positive"));
        }
        if self.d_informative < 2 {
            return Err(invalid("need at least 2 informative features"));
        }
        if !(self.positive_ratio > 0.0 && self.positive_ratio < 1.0) {
            return Err(invalid(format!(
                "positive_ratio must lie in (0, 1), got {}",
                self.positive_ratio
            )));
        }
        if !(self.noise_ratio >= 0.0 && self.noise_ratio < 1.0) {
            return Err(invalid(format!(
                "noise_ratio must lie in [0, 1), got {}",
                self.noise_ratio
            )));
        }
        if !(self.cube_side > 0.0 && self.cube_side.is_finite()) {
            return Err(invalid("cube_side must be positive"));
        }
        Ok(())
    }
}

/// A generated dataset together with the labels before flipping.
#[derive(Clone, Debug)]
pub struct SynthData {
    pub data: Dataset,
    pub clean_labels: Vec<f64>,
    /// Redundant-column coefficients, `d_informative × d_redundant`.
    pub mixing: DMatrix<f64>,
}

pub fn gen_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    Ok(gen_synthetic_detailed(cfg)?.data)
}

/// Two unit-variance Gaussian clusters per class at distinct hypercube vertices,
/// redundant columns as random linear combinations, then exact label flipping.
pub fn gen_synthetic_detailed(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (n, di, dr) = (cfg.n, cfg.d_informative, cfg.d_redundant);
    let half = cfg.cube_side / 2.0;

    let mut vertices: Vec<Vec<f64>> = Vec::with_capacity(4);
    while vertices.len() < 4 {
        let v: Vec<f64> = (0..di)
            .map(|_| if rng.random_bool(0.5) { half } else { -half })
            .collect();
        if !vertices.contains(&v) {
            vertices.push(v);
        }
    }

    let n_pos = cfg.positives();
    let mut clean = vec![-1.0; n];
    for i in sample(&mut rng, n, n_pos) {
        clean[i] = 1.0;
    }

    let mut x = DMatrix::zeros(n, di + dr);
    for i in 0..n {
        let base = if clean[i] > 0.0 { 0 } else { 2 };
        let center = &vertices[base + rng.random_range(0..2)];
        for j in 0..di {
            let z: f64 = rng.sample(StandardNormal);
            x[(i, j)] = center[j] + z;
        }
    }

    let mixing = DMatrix::from_fn(di, dr, |_, _| rng.random_range(-1.0..=1.0));
    if dr > 0 {
        let redundant = x.columns(0, di) * &mixing;
        x.columns_mut(di, dr).copy_from(&redundant);
    }

    let mut labels = clean.clone();
    for i in sample(&mut rng, n, cfg.flips()) {
        labels[i] = -labels[i];
    }

    let data = Dataset::with_sequential_ids(x, labels).map_err(|e| match e {
        Error::InvalidArgument(m) => invalid(format!("generated data rejected: {m}")),
        other => other,
    })?;
    Ok(SynthData {
        data,
        clean_labels: clean,
        mixing,
    })
}
