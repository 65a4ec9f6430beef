//! Aggregation of round records and CSV/JSON report files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::harness::config::{ExperimentConfig, Method};
use crate::harness::run::{repetition_seed, ExperimentReport, RoundRecord};
use crate::models::Metrics;
use crate::unlearn::{gauss_constant, PhaseTimings};

pub const ROUNDS_FILE: &str = "rounds.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Flat CSV form of a [`RoundRecord`]. Times are in milliseconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RawRow {
    repetition: usize,
    method: String,
    t: usize,
    remaining: usize,
    residual: Option<f64>,
    threshold: Option<f64>,
    certified: Option<bool>,
    retrained: bool,
    accuracy: f64,
    precision: f64,
    recall: f64,
    cost: f64,
    published_accuracy: Option<f64>,
    published_precision: Option<f64>,
    published_recall: Option<f64>,
    published_cost: Option<f64>,
    gradient_ms: f64,
    hessian_ms: f64,
    solve_ms: f64,
    certify_ms: f64,
    retrain_ms: f64,
    valuation_ms: f64,
    elapsed_ms: f64,
}

impl From<&RoundRecord> for RawRow {
    fn from(r: &RoundRecord) -> Self {
        let p = r.published;
        let t = &r.timings;
        Self {
            repetition: r.repetition,
            method: r.method.name().to_string(),
            t: r.round,
            remaining: r.remaining,
            residual: r.residual,
            threshold: r.threshold,
            certified: r.certified,
            retrained: r.retrained,
            accuracy: r.metrics.accuracy,
            precision: r.metrics.precision,
            recall: r.metrics.recall,
            cost: r.metrics.misclassification_cost,
            published_accuracy: p.map(|m| m.accuracy),
            published_precision: p.map(|m| m.precision),
            published_recall: p.map(|m| m.recall),
            published_cost: p.map(|m| m.misclassification_cost),
            gradient_ms: t.gradient * 1e3,
            hessian_ms: t.hessian * 1e3,
            solve_ms: t.solve * 1e3,
            certify_ms: t.certify * 1e3,
            retrain_ms: t.retrain * 1e3,
            valuation_ms: t.valuation * 1e3,
            elapsed_ms: r.elapsed_ms(),
        }
    }
}

impl RawRow {
    fn into_record(self) -> Result<RoundRecord> {
        let published = match (
            self.published_accuracy,
            self.published_precision,
            self.published_recall,
            self.published_cost,
        ) {
            (Some(accuracy), Some(precision), Some(recall), Some(misclassification_cost)) => {
                Some(Metrics {
                    accuracy,
                    precision,
                    recall,
                    misclassification_cost,
                })
            }
            _ => None,
        };
        Ok(RoundRecord {
            repetition: self.repetition,
            method: Method::parse(&self.method)?,
            round: self.t,
            remaining: self.remaining,
            residual: self.residual,
            threshold: self.threshold,
            certified: self.certified,
            retrained: self.retrained,
            metrics: Metrics {
                accuracy: self.accuracy,
                precision: self.precision,
                recall: self.recall,
                misclassification_cost: self.cost,
            },
            published,
            timings: PhaseTimings {
                gradient: self.gradient_ms / 1e3,
                hessian: self.hessian_ms / 1e3,
                solve: self.solve_ms / 1e3,
                certify: self.certify_ms / 1e3,
                retrain: self.retrain_ms / 1e3,
                valuation: self.valuation_ms / 1e3,
            },
        })
    }
}

/// Mean and sample standard deviation (0 for a single value).
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
}

pub fn moments(xs: &[f64]) -> Option<Moments> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some(Moments { mean, std })
}

/// Per-method, per-round summary over repetitions. Timing-free, so reproducible.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub method: Method,
    pub round: usize,
    pub count: usize,
    pub accuracy: Moments,
    pub precision: Moments,
    pub recall: Moments,
    pub cost: Moments,
    pub residual: Option<Moments>,
    pub residual_max: Option<f64>,
    pub threshold: Option<f64>,
    pub certified_rate: Option<f64>,
    pub retrain_rate: f64,
}

fn grouped(records: &[RoundRecord]) -> BTreeMap<(Method, usize), Vec<&RoundRecord>> {
    let mut groups: BTreeMap<(Method, usize), Vec<&RoundRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.method, r.round)).or_default().push(r);
    }
    for g in groups.values_mut() {
        g.sort_by_key(|r| r.repetition);
    }
    groups
}

pub fn aggregate(records: &[RoundRecord]) -> Vec<AggregateRow> {
    grouped(records)
        .into_iter()
        .map(|((method, round), rs)| {
            let col = |f: &dyn Fn(&RoundRecord) -> f64| {
                moments(&rs.iter().map(|r| f(r)).collect::<Vec<_>>()).unwrap()
            };
            let residuals: Vec<f64> = rs.iter().filter_map(|r| r.residual).collect();
            let thresholds: Vec<f64> = rs.iter().filter_map(|r| r.threshold).collect();
            let certified: Vec<f64> = rs
                .iter()
                .filter_map(|r| r.certified.map(|c| if c { 1.0 } else { 0.0 }))
                .collect();
            AggregateRow {
                method,
                round,
                count: rs.len(),
                accuracy: col(&|r| r.metrics.accuracy),
                precision: col(&|r| r.metrics.precision),
                recall: col(&|r| r.metrics.recall),
                cost: col(&|r| r.metrics.misclassification_cost),
                residual: moments(&residuals),
                residual_max: residuals.iter().copied().reduce(f64::max),
                threshold: moments(&thresholds).map(|m| m.mean),
                certified_rate: moments(&certified).map(|m| m.mean),
                retrain_rate: col(&|r| if r.retrained { 1.0 } else { 0.0 }).mean,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub method: String,
    pub phase: String,
    pub median_ms: f64,
    pub mean_ms: f64,
    pub count: usize,
}

pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    })
}

/// Median and mean per-round time of every phase, per method.
pub fn timing_table(records: &[RoundRecord]) -> Vec<TimingRow> {
    let mut by_method: BTreeMap<Method, Vec<&RoundRecord>> = BTreeMap::new();
    for r in records {
        by_method.entry(r.method).or_default().push(r);
    }
    let phases: [(&str, fn(&PhaseTimings) -> f64); 7] = [
        ("gradient", |t| t.gradient),
        ("hessian", |t| t.hessian),
        ("solve", |t| t.solve),
        ("certify", |t| t.certify),
        ("retrain", |t| t.retrain),
        ("valuation", |t| t.valuation),
        ("total", |t| t.total()),
    ];
    let mut rows = Vec::new();
    for (method, rs) in by_method {
        for (phase, get) in phases {
            let ms: Vec<f64> = rs.iter().map(|r| get(&r.timings) * 1e3).collect();
            rows.push(TimingRow {
                method: method.name().to_string(),
                phase: phase.to_string(),
                median_ms: median(&ms).unwrap_or(0.0),
                mean_ms: moments(&ms).map_or(0.0, |m| m.mean),
                count: ms.len(),
            });
        }
    }
    rows
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

const AGGREGATE_HEADER: [&str; 17] = [
    "method",
    "t",
    "count",
    "accuracy_mean",
    "accuracy_std",
    "precision_mean",
    "precision_std",
    "recall_mean",
    "recall_std",
    "cost_mean",
    "cost_std",
    "residual_mean",
    "residual_std",
    "residual_max",
    "threshold",
    "certified_rate",
    "retrain_rate",
];

fn create(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

pub fn write_rounds_csv(records: &[RoundRecord], path: &Path) -> Result<()> {
    let mut w = create(path)?;
    if records.is_empty() {
        // serde writes the header with the first row only
        w.write_record(RAW_HEADER)?;
    }
    for r in records {
        w.serialize(RawRow::from(r))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

const RAW_HEADER: [&str; 23] = [
    "repetition",
    "method",
    "t",
    "remaining",
    "residual",
    "threshold",
    "certified",
    "retrained",
    "accuracy",
    "precision",
    "recall",
    "cost",
    "published_accuracy",
    "published_precision",
    "published_recall",
    "published_cost",
    "gradient_ms",
    "hessian_ms",
    "solve_ms",
    "certify_ms",
    "retrain_ms",
    "valuation_ms",
    "elapsed_ms",
];

pub fn read_rounds_csv(path: &Path) -> Result<Vec<RoundRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut out = Vec::new();
    for row in reader.deserialize::<RawRow>() {
        out.push(row?.into_record()?);
    }
    Ok(out)
}

pub fn write_aggregate_csv(rows: &[AggregateRow], path: &Path) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(AGGREGATE_HEADER)?;
    for a in rows {
        w.write_record([
            a.method.name().to_string(),
            a.round.to_string(),
            a.count.to_string(),
            a.accuracy.mean.to_string(),
            a.accuracy.std.to_string(),
            a.precision.mean.to_string(),
            a.precision.std.to_string(),
            a.recall.mean.to_string(),
            a.recall.std.to_string(),
            a.cost.mean.to_string(),
            a.cost.std.to_string(),
            opt(a.residual.map(|m| m.mean)),
            opt(a.residual.map(|m| m.std)),
            opt(a.residual_max),
            opt(a.threshold),
            opt(a.certified_rate),
            a.retrain_rate.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_timing_csv(rows: &[TimingRow], path: &Path) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["method", "phase", "median_ms", "mean_ms", "count"])?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.phase.clone(),
            r.median_ms.to_string(),
            r.mean_ms.to_string(),
            r.count.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Constants needed to interpret and re-check a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportConstants {
    pub grad_bound: f64,
    pub hessian_lipschitz: f64,
    pub gauss_constant: f64,
    pub n_train: Option<usize>,
    /// Certification threshold per round.
    pub thresholds: Vec<f64>,
    /// Output-perturbation noise standard deviation per round.
    pub output_noise_std: Vec<f64>,
    pub objective_noise_std: Option<f64>,
}

pub fn report_constants(
    cfg: &ExperimentConfig,
    records: &[RoundRecord],
) -> Result<ReportConstants> {
    let loss = cfg.loss();
    let schedule = cfg.schedule()?;
    let n_train = match cfg.synthetic_train_size()? {
        Some(n) => Some(n),
        None => records
            .first()
            .map(|r| r.remaining + schedule.cumulative(r.round)),
    };
    let mut c = ReportConstants {
        grad_bound: loss.grad_bound,
        hessian_lipschitz: loss.hessian_lipschitz,
        gauss_constant: gauss_constant(cfg.delta)?,
        n_train,
        thresholds: Vec::new(),
        output_noise_std: Vec::new(),
        objective_noise_std: None,
    };
    if let Some(n) = n_train {
        let budget = cfg.budget(n)?;
        let session = cfg.session_config(budget.clone(), cfg.seed);
        for t in 1..=budget.rounds() {
            c.thresholds.push(session.threshold(t)?);
            c.output_noise_std.push(budget.output_noise_std(t)?);
        }
        c.objective_noise_std = Some(budget.objective_noise_std()?);
    }
    Ok(c)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportManifest {
    pub config: ExperimentConfig,
    pub repetition_seeds: Vec<u64>,
    pub constants: ReportConstants,
    pub failures: Vec<crate::harness::run::RunFailure>,
    pub files: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmittedFiles {
    pub rounds: PathBuf,
    pub aggregate: PathBuf,
    pub timing: PathBuf,
    pub manifest: PathBuf,
}

/// Writes the raw rounds, aggregate and timing CSVs and a JSON manifest into `out_dir`.
pub fn emit_report(report: &ExperimentReport, out_dir: &Path) -> Result<EmittedFiles> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let files = EmittedFiles {
        rounds: out_dir.join(ROUNDS_FILE),
        aggregate: out_dir.join(AGGREGATE_FILE),
        timing: out_dir.join(TIMING_FILE),
        manifest: out_dir.join(MANIFEST_FILE),
    };
    write_rounds_csv(&report.records, &files.rounds)?;
    write_aggregate_csv(&aggregate(&report.records), &files.aggregate)?;
    write_timing_csv(&timing_table(&report.records), &files.timing)?;
    let manifest = ReportManifest {
        config: report.config.clone(),
        repetition_seeds: (0..report.config.repetitions)
            .map(|r| repetition_seed(report.config.seed, r))
            .collect(),
        constants: report_constants(&report.config, &report.records)?,
        failures: report.failures.clone(),
        files: [ROUNDS_FILE, AGGREGATE_FILE, TIMING_FILE]
            .into_iter()
            .map(String::from)
            .collect(),
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&files.manifest, text).map_err(|e| Error::io(&files.manifest, e))?;
    Ok(files)
}

/// Re-aggregates a raw rounds CSV into `out_dir`.
pub fn aggregate_file(rounds: &Path, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let records = read_rounds_csv(rounds)?;
    if records.iter().any(|r| r.round == 0) {
        return Err(invalid(format!(
            "{}: round numbers start at 1",
            rounds.display()
        )));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let agg = out_dir.join(AGGREGATE_FILE);
    let timing = out_dir.join(TIMING_FILE);
    write_aggregate_csv(&aggregate(&records), &agg)?;
    write_timing_csv(&timing_table(&records), &timing)?;
    Ok((agg, timing))
}
