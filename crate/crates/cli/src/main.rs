use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dvwu_core::data::{gen_synthetic, load_csv, save_csv};
use dvwu_core::harness::bench::write_bench_csv;
use dvwu_core::harness::{
    aggregate_file, emit_report, run_continuous_deletion, run_efficiency_bench, BenchOptions,
    ExperimentConfig,
};
use dvwu_core::models::{self, evaluate, CostMatrix, DEFAULT_TRAIN_TOL};
use dvwu_core::valuation::{ValuationKind, ValuationMode, DEFAULT_ALPHA, DEFAULT_ZERO_TOL};
use dvwu_core::{Dataset, Loss, SynthConfig, ValuationMethod, ValueProfile};

#[derive(Parser)]
#[command(
    name = "dvwu",
    version,
    about = "Value-weighted certified unlearning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset as CSV.
    GenData(GenData),
    /// Compute data values and unlearning weights for a CSV dataset.
    Value(Value),
    /// Train a regularized linear classifier and write its parameters as JSON.
    Train(Train),
    /// Run a continuous-deletion experiment from a config file.
    Run(Run),
    /// Time one deletion round for every configured method.
    Bench(Bench),
    /// Re-aggregate an existing raw rounds CSV.
    Report(Report),
}

#[derive(Args)]
struct GenData {
    /// Named preset (sy1..sy6); individual flags override its fields.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d_informative: Option<usize>,
    #[arg(long)]
    d_redundant: Option<usize>,
    #[arg(long)]
    positive_ratio: Option<f64>,
    #[arg(long)]
    noise_ratio: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, ValueEnum)]
enum LossArg {
    Logistic,
    HuberizedSvm,
    Squared,
}

#[derive(Args)]
struct LossOpts {
    #[arg(long, value_enum, default_value = "logistic")]
    loss: LossArg,
    /// Smoothing width of the huberized SVM loss.
    #[arg(long, default_value_t = 2.0)]
    gamma: f64,
    #[arg(long, default_value_t = 0.001)]
    lambda: f64,
}

impl LossOpts {
    fn loss(&self) -> Loss {
        match self.loss {
            LossArg::Logistic => Loss::logistic(),
            LossArg::HuberizedSvm => Loss::huberized_svm(self.gamma),
            LossArg::Squared => Loss::squared(),
        }
    }
}

#[derive(Args)]
struct CsvInput {
    /// Training CSV with an id column, a label column and numeric features.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "label")]
    label_column: String,
    #[arg(long, default_value = "1")]
    positive_token: String,
}

impl CsvInput {
    fn load(&self, path: &Path) -> anyhow::Result<Dataset> {
        Ok(load_csv(path, &self.label_column, &self.positive_token)?)
    }
}

#[derive(Copy, Clone, ValueEnum)]
enum ValueMethod {
    KnnSv,
    Loo,
}

#[derive(Args)]
struct Value {
    #[command(flatten)]
    input: CsvInput,
    /// Utility set: test points for knn-sv, validation points for loo. Defaults to
    /// the training data itself.
    #[arg(long)]
    utility: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "knn-sv")]
    method: ValueMethod,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = DEFAULT_ZERO_TOL)]
    zero_tol: f64,
    #[command(flatten)]
    loss: LossOpts,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Train {
    #[command(flatten)]
    input: CsvInput,
    /// Optional held-out CSV to report accuracy on.
    #[arg(long)]
    test: Option<PathBuf>,
    #[command(flatten)]
    loss: LossOpts,
    #[arg(long, default_value_t = DEFAULT_TRAIN_TOL)]
    tol: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Run {
    /// Experiment config (TOML) or a previously emitted manifest.json.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the base seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Bench {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Points removed in the timed round; defaults to the first configured round size.
    #[arg(long)]
    size: Option<usize>,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Report {
    /// Raw rounds CSV written by `run`.
    #[arg(long)]
    rounds: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// A failure that should exit with the usage code.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn read_config(path: &Path, seed: Option<u64>) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_path(path)
        .map_err(|e| UsageError(format!("cannot use config {}: {e}", path.display())))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn gen_data(args: GenData) -> anyhow::Result<()> {
    let mut cfg = match &args.preset {
        Some(name) => SynthConfig::preset(name).map_err(|e| UsageError(e.to_string()))?,
        None => SynthConfig {
            n: 1000,
            d_informative: 18,
            d_redundant: 2,
            positive_ratio: 0.5,
            noise_ratio: 0.05,
            cube_side: 2.0,
            seed: 0,
        },
    };
    cfg.n = args.n.unwrap_or(cfg.n);
    cfg.d_informative = args.d_informative.unwrap_or(cfg.d_informative);
    cfg.d_redundant = args.d_redundant.unwrap_or(cfg.d_redundant);
    cfg.positive_ratio = args.positive_ratio.unwrap_or(cfg.positive_ratio);
    cfg.noise_ratio = args.noise_ratio.unwrap_or(cfg.noise_ratio);
    cfg.seed = args.seed;
    let data = gen_synthetic(&cfg)?;
    save_csv(&data, &args.out)?;
    log::info!("wrote {} rows to {}", data.n(), args.out.display());
    Ok(())
}

fn value(args: Value) -> anyhow::Result<()> {
    let train = args.input.load(&args.input.data)?;
    let utility = match &args.utility {
        Some(p) => args.input.load(p)?,
        None => train.clone(),
    };
    let kind = match args.method {
        ValueMethod::KnnSv => ValuationKind::KnnShapley,
        ValueMethod::Loo => ValuationKind::LeaveOneOut,
    };
    let mut method = ValuationMethod::new(kind, ValuationMode::Static);
    method.k = args.k;
    let values = method.compute(&train, &utility, args.loss.lambda, args.loss.loss())?;
    let profile = ValueProfile::initial(values, args.alpha, args.zero_tol)?;
    profile.write_csv(&args.out)?;
    Ok(())
}

fn train(args: Train) -> anyhow::Result<()> {
    let data = args.input.load(&args.input.data)?;
    let model = models::train(&data, args.loss.lambda, args.loss.loss(), None, args.tol)?;
    if let Some(p) = &args.test {
        let test = args.input.load(p)?;
        let m = evaluate(&model.w, &test, CostMatrix::default())?;
        println!("test accuracy {:.6}", m.accuracy);
    }
    let json = serde_json::to_string_pretty(&model)?;
    fs::write(&args.out, json).with_context(|| format!("writing {}", args.out.display()))?;
    Ok(())
}

fn run(args: Run) -> anyhow::Result<()> {
    let cfg = read_config(&args.config, args.seed)?;
    let report = run_continuous_deletion(&cfg)?;
    for f in &report.failures {
        log::warn!("repetition {} failed: {}", f.repetition, f.message);
    }
    let files = emit_report(&report, &args.out)?;
    println!("{}", files.aggregate.display());
    Ok(())
}

fn bench(args: Bench) -> anyhow::Result<()> {
    let cfg = read_config(&args.config, args.seed)?;
    let size = match args.size {
        Some(s) => s,
        None => cfg.schedule()?.size(1),
    };
    if args.trials == 0 {
        bail!(UsageError("--trials must be at least 1".into()));
    }
    let opts = BenchOptions {
        trials: args.trials,
        ..BenchOptions::default()
    };
    let rows = run_efficiency_bench(&cfg, size, &opts)?;
    for r in &rows {
        println!("{:<12} {:.3e} s", r.method.name(), r.median_s);
    }
    write_bench_csv(&rows, &args.out)?;
    Ok(())
}

fn report(args: Report) -> anyhow::Result<()> {
    let (agg, _) = aggregate_file(&args.rounds, &args.out)?;
    println!("{}", agg.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Value(a) => value(a),
        Command::Train(a) => train(a),
        Command::Run(a) => run(a),
        Command::Bench(a) => bench(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
