//! Experiment configuration, read from TOML (or from an emitted JSON manifest).

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    DatasetManifest, SynthConfig, DEFAULT_TRAIN_FRACTION, DEFAULT_VALIDATION_FRACTION,
};
use crate::error::{invalid, Error, Result};
use crate::models::{CostMatrix, Loss, LossKind, DEFAULT_TRAIN_TOL};
use crate::unlearn::{
    CertBudget, DeletionSchedule, Perturbation, SessionConfig, ThresholdKind, DEFAULT_ASCENT_STEP,
    DEFAULT_ASCENT_STEPS,
};
use crate::valuation::{
    ValuationKind, ValuationMethod, ValuationMode, DEFAULT_ALPHA, DEFAULT_K, DEFAULT_ZERO_TOL,
};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[serde(alias = "Retrain")]
    Retrain,
    #[serde(alias = "Newton")]
    Newton,
    #[serde(alias = "Influence")]
    Influence,
    #[serde(alias = "GradientA")]
    GradientA,
    #[serde(alias = "DVWUk")]
    DvwuK,
    #[serde(alias = "DVWUl")]
    DvwuL,
    #[serde(alias = "DVWUdk")]
    DvwuDk,
    #[serde(alias = "DVWUdl")]
    DvwuDl,
    #[serde(alias = "WeightedGA")]
    WeightedGa,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Retrain,
        Method::Newton,
        Method::Influence,
        Method::GradientA,
        Method::DvwuK,
        Method::DvwuL,
        Method::DvwuDk,
        Method::DvwuDl,
        Method::WeightedGa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Retrain => "Retrain",
            Method::Newton => "Newton",
            Method::Influence => "Influence",
            Method::GradientA => "GradientA",
            Method::DvwuK => "DVWUk",
            Method::DvwuL => "DVWUl",
            Method::DvwuDk => "DVWUdk",
            Method::DvwuDl => "DVWUdl",
            Method::WeightedGa => "WeightedGA",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s) || serde_name(*m) == s)
            .ok_or_else(|| invalid(format!("unknown method {s:?}")))
    }

    /// Methods driven by the certified Newton session (perturbation and certification apply).
    pub fn is_newton_family(self) -> bool {
        matches!(
            self,
            Method::Newton | Method::DvwuK | Method::DvwuL | Method::DvwuDk | Method::DvwuDl
        )
    }

    /// How data values are obtained, for methods that use weights.
    pub fn valuation(self, k: usize) -> Option<ValuationMethod> {
        let (kind, mode) = match self {
            Method::DvwuK | Method::WeightedGa => {
                (ValuationKind::KnnShapley, ValuationMode::Static)
            }
            Method::DvwuL => (ValuationKind::LeaveOneOut, ValuationMode::Static),
            Method::DvwuDk => (ValuationKind::KnnShapley, ValuationMode::Dynamic),
            Method::DvwuDl => (ValuationKind::LeaveOneOut, ValuationMode::Dynamic),
            _ => return None,
        };
        Some(ValuationMethod { kind, mode, k })
    }
}

fn serde_name(m: Method) -> String {
    serde_json::to_value(m)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    /// Explicit generator parameters; `seed` is replaced by the run's data seed.
    Synthetic(SynthConfig),
    /// A named preset, optionally with a different sample count.
    Preset {
        name: String,
        n: Option<usize>,
    },
    Manifest {
        path: PathBuf,
    },
}

impl DataSource {
    pub fn synth_config(&self) -> Result<Option<SynthConfig>> {
        match self {
            DataSource::Synthetic(c) => Ok(Some(c.clone())),
            DataSource::Preset { name, n } => {
                let mut c = SynthConfig::preset(name)?;
                if let Some(n) = n {
                    c.n = *n;
                }
                Ok(Some(c))
            }
            DataSource::Manifest { .. } => Ok(None),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    #[serde(flatten)]
    pub kind: LossKind,
    /// Overrides the default gradient bound `C`.
    #[serde(default)]
    pub grad_bound: Option<f64>,
    /// Overrides the default Hessian Lipschitz constant `β`.
    #[serde(default)]
    pub hessian_lipschitz: Option<f64>,
}

impl LossConfig {
    pub fn loss(&self) -> Loss {
        let base = match self.kind {
            LossKind::Logistic => Loss::logistic(),
            LossKind::HuberizedSvm { gamma } => Loss::huberized_svm(gamma),
            LossKind::Squared => Loss::squared(),
        };
        base.with_constants(
            self.grad_bound.unwrap_or(base.grad_bound),
            self.hessian_lipschitz.unwrap_or(base.hessian_lipschitz),
        )
    }
}

impl From<Loss> for LossConfig {
    fn from(l: Loss) -> Self {
        Self {
            kind: l.kind,
            grad_bound: Some(l.grad_bound),
            hessian_lipschitz: Some(l.hessian_lipschitz),
        }
    }
}

/// How each round's deletion set is drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum DeletionPolicy {
    /// Uniformly without replacement from the remaining points.
    #[default]
    Uniform,
    /// A `negative_share` of each round drawn from points whose initial KNN-Shapley
    /// value is negative, the rest from the other points.
    ValueBiased { negative_share: f64 },
}

fn default_true() -> bool {
    true
}
fn default_train_fraction() -> f64 {
    DEFAULT_TRAIN_FRACTION
}
fn default_validation_fraction() -> f64 {
    DEFAULT_VALIDATION_FRACTION
}
fn default_one() -> usize {
    1
}
fn default_train_tol() -> f64 {
    DEFAULT_TRAIN_TOL
}
fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}
fn default_zero_tol() -> f64 {
    DEFAULT_ZERO_TOL
}
fn default_k() -> usize {
    DEFAULT_K
}
fn default_ascent_step() -> f64 {
    DEFAULT_ASCENT_STEP
}
fn default_ascent_steps() -> usize {
    DEFAULT_ASCENT_STEPS
}
fn default_epsilon() -> f64 {
    1.0
}
fn default_delta() -> f64 {
    1e-4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    /// Regenerate synthetic data for every repetition; otherwise only the split and
    /// deletions vary.
    #[serde(default = "default_true")]
    pub fresh_data: bool,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    /// Share of the training portion held out for leave-one-out utility. Only used
    /// when some method values data by leave-one-out.
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
    pub loss: LossConfig,
    pub lambda: f64,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub perturbation: Perturbation,
    #[serde(default)]
    pub threshold: ThresholdKind,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub rounds: usize,
    /// Uniform round size `m`; ignored when `deletion_sizes` is set.
    #[serde(default)]
    pub deletions_per_round: Option<usize>,
    #[serde(default)]
    pub deletion_sizes: Option<Vec<usize>>,
    #[serde(default)]
    pub deletion_policy: DeletionPolicy,
    #[serde(default = "default_one")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed: u64,
    /// Certify every `check_every` rounds; 0 disables certification.
    #[serde(default = "default_one")]
    pub check_every: usize,
    #[serde(default = "default_train_tol")]
    pub train_tol: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_zero_tol")]
    pub zero_tol: f64,
    #[serde(default = "default_k")]
    pub knn_k: usize,
    #[serde(default = "default_ascent_step")]
    pub ascent_step: f64,
    #[serde(default = "default_ascent_steps")]
    pub ascent_steps: usize,
    /// Also score the noisy published parameters in output-perturbation mode.
    #[serde(default)]
    pub score_published: bool,
    #[serde(default)]
    pub costs: Option<CostMatrix>,
}

impl ExperimentConfig {
    /// A config with defaults for everything but the essentials.
    pub fn new(
        data: DataSource,
        loss: Loss,
        lambda: f64,
        methods: Vec<Method>,
        rounds: usize,
        m: usize,
    ) -> Self {
        Self {
            data,
            fresh_data: true,
            train_fraction: DEFAULT_TRAIN_FRACTION,
            validation_fraction: DEFAULT_VALIDATION_FRACTION,
            loss: loss.into(),
            lambda,
            methods,
            perturbation: Perturbation::None,
            threshold: ThresholdKind::General,
            epsilon: default_epsilon(),
            delta: default_delta(),
            rounds,
            deletions_per_round: Some(m),
            deletion_sizes: None,
            deletion_policy: DeletionPolicy::Uniform,
            repetitions: 1,
            seed: 0,
            check_every: 1,
            train_tol: DEFAULT_TRAIN_TOL,
            alpha: DEFAULT_ALPHA,
            zero_tol: DEFAULT_ZERO_TOL,
            knn_k: DEFAULT_K,
            ascent_step: DEFAULT_ASCENT_STEP,
            ascent_steps: DEFAULT_ASCENT_STEPS,
            score_published: false,
            costs: None,
        }
    }

    /// Reads a TOML config, or a JSON report manifest (whose `config` entry is used).
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let mut cfg: ExperimentConfig = if is_json {
            let value: serde_json::Value = serde_json::from_str(&text)?;
            let inner = value.get("config").cloned().unwrap_or(value);
            serde_json::from_value(inner)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        if let DataSource::Manifest { path: p } = &mut cfg.data {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn loss(&self) -> Loss {
        self.loss.loss()
    }

    pub fn costs(&self) -> CostMatrix {
        self.costs.unwrap_or_default()
    }

    pub fn schedule(&self) -> Result<DeletionSchedule> {
        let s = match (&self.deletion_sizes, self.deletions_per_round) {
            (Some(sizes), _) => DeletionSchedule::from_sizes(sizes.clone())?,
            (None, Some(m)) => DeletionSchedule::uniform(m, self.rounds)?,
            (None, None) => {
                return Err(Error::Config(
                    "set deletions_per_round or deletion_sizes".into(),
                ))
            }
        };
        if s.rounds() != self.rounds {
            return Err(Error::Config(format!(
                "deletion_sizes lists {} rounds but rounds = {}",
                s.rounds(),
                self.rounds
            )));
        }
        Ok(s)
    }

    pub fn uses_leave_one_out(&self) -> bool {
        self.methods.iter().any(|m| {
            m.valuation(self.knn_k)
                .is_some_and(|v| v.kind == ValuationKind::LeaveOneOut)
        })
    }

    /// The certification budget for a run whose training set has `n` points.
    pub fn budget(&self, n: usize) -> Result<CertBudget> {
        let loss = self.loss();
        CertBudget::new(
            self.epsilon,
            self.delta,
            loss.grad_bound,
            loss.hessian_lipschitz,
            self.lambda,
            n,
            self.schedule()?,
        )
    }

    pub fn session_config(&self, budget: CertBudget, seed: u64) -> SessionConfig {
        SessionConfig {
            budget,
            perturbation: self.perturbation,
            threshold: self.threshold,
            check_every: self.check_every,
            train_tol: self.train_tol,
            seed,
        }
    }

    /// Expected training-set size for synthetic sources.
    pub fn synthetic_train_size(&self) -> Result<Option<usize>> {
        let Some(c) = self.data.synth_config()? else {
            return Ok(None);
        };
        let all = (self.train_fraction * c.n as f64).round() as usize;
        let val = if self.uses_leave_one_out() {
            (self.validation_fraction * all as f64).round() as usize
        } else {
            0
        };
        Ok(Some(all - val))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1".into());
        }
        if self.rounds == 0 {
            return bad("rounds must be at least 1".into());
        }
        if self.methods.is_empty() {
            return bad("no methods configured".into());
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return bad("methods listed more than once".into());
        }
        if !(self.lambda > 0.0) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(self.train_tol > 0.0) {
            return bad("train_tol must be positive".into());
        }
        if !(self.ascent_step > 0.0) || self.ascent_steps == 0 {
            return bad("gradient ascent needs a positive step and at least one iteration".into());
        }
        if self.knn_k == 0 {
            return bad("knn_k must be at least 1".into());
        }
        if let DeletionPolicy::ValueBiased { negative_share } = self.deletion_policy {
            if !(0.0..=1.0).contains(&negative_share) {
                return bad(format!(
                    "negative_share must lie in [0, 1], got {negative_share}"
                ));
            }
        }
        self.loss().validate()?;
        self.schedule()?;
        if let Some(c) = self.data.synth_config()? {
            c.validate()?;
        }
        if let Some(n) = self.synthetic_train_size()? {
            self.budget(n)?;
        }
        Ok(())
    }

    pub fn load_manifest(&self) -> Result<Option<DatasetManifest>> {
        match &self.data {
            DataSource::Manifest { path } => Ok(Some(DatasetManifest::read(path)?)),
            _ => Ok(None),
        }
    }
}
