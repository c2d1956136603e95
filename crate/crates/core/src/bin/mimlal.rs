use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mimlal::dataset::{generate_synthetic, load_dataset, synthetic_weights, SyntheticSpec};
use mimlal::experiment::{run_experiment, ExperimentConfig};
use mimlal::metrics::evaluate;
use mimlal::model::{ParamMatrix, DEFAULT_THRESHOLD};
use mimlal::objective::{mml_gradient, DEFAULT_LAMBDA};
use mimlal::rng::{derive_seed, Purpose};
use mimlal::trainer::{full_gd, trace_csv, TrainConfig, UpdateMode};
use mimlal::verify::{run_suite, SuiteConfig};
use mimlal::{Criterion, Dataset, Error, Result};

#[derive(Parser)]
#[command(
    name = "mimlal",
    version,
    about = "Active learning for MIML data with incomplete labels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit by full gradient descent on the observed labels.
    Train(TrainArgs),
    /// Run the active learning loop over folds and seeds.
    ActiveRun(ActiveRunArgs),
    /// Write a synthetic dataset.
    GenSynthetic(GenArgs),
    /// Check closed forms and gradients against brute force.
    Verify(VerifyArgs),
    /// Score saved weights on a labeled dataset.
    Evaluate(EvalArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long, default_value_t = 2000)]
    max_epochs: usize,
    #[arg(long, default_value_t = 1e-6)]
    grad_tol: f64,
    /// Output directory for `weights.txt` and `trace.csv`.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct ActiveRunArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    criterion: Option<Criterion>,
    #[arg(long)]
    mode: Option<UpdateMode>,
    #[arg(long)]
    queries: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Any other config key, as `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 100)]
    bags: usize,
    #[arg(long, default_value_t = 5)]
    classes: usize,
    #[arg(long, default_value_t = 10)]
    dim: usize,
    #[arg(long, default_value_t = 2)]
    bag_min: usize,
    #[arg(long, default_value_t = 8)]
    bag_max: usize,
    #[arg(long, default_value_t = 2.0)]
    separation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for `features.csv`, `labels.csv` and `weights.txt`.
    #[arg(long, default_value = "data")]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Scale the MML gradient by 1.01 to check that the suite catches it.
    #[arg(long, hide = true)]
    inject_gradient_bug: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn cmd_train(a: TrainArgs) -> Result<i32> {
    let ds = load_dataset(&a.features, &a.labels)?;
    let cfg = TrainConfig {
        lambda: a.lambda,
        max_epochs: a.max_epochs,
        grad_tol: a.grad_tol,
        mode: UpdateMode::FullGd,
        ..TrainConfig::default()
    };
    let fit = full_gd(
        &ds,
        &cfg,
        &ParamMatrix::zeros(ds.num_classes(), ds.feature_dim()),
    )?;
    create_dir(&a.out)?;
    fit.w.save(&a.out.join("weights.txt"))?;
    write(&a.out.join("trace.csv"), &trace_csv(&fit.trace))?;
    println!(
        "epochs={} objective={:e} grad_norm={:e} converged={}",
        fit.trace.len() - 1,
        fit.final_objective(),
        fit.final_grad_norm(),
        fit.converged
    );
    Ok(0)
}

fn cmd_active_run(a: ActiveRunArgs) -> Result<i32> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k, v)?;
    }
    if let Some(v) = a.features {
        cfg.features = Some(v);
    }
    if let Some(v) = a.labels {
        cfg.labels = Some(v);
    }
    if let Some(v) = a.criterion {
        cfg.criterion = v;
    }
    if let Some(v) = a.mode {
        cfg.mode = v;
    }
    if let Some(v) = a.queries {
        cfg.queries = v;
    }
    if let Some(v) = a.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.seeds {
        cfg.seeds = v;
    }
    if let Some(v) = a.folds {
        cfg.folds = v;
    }
    if let Some(v) = a.out {
        cfg.out = v;
    }
    let results = run_experiment(&cfg)?;
    for r in &results {
        let last = r.output.curve.last().expect("curve has the initial row");
        println!(
            "fold={} seed={} cost={} bag_accuracy={:.4} hamming_loss={:.4}",
            r.fold, r.seed_index, last.cost, last.bag_accuracy, last.hamming_loss
        );
    }
    println!("wrote {} runs to {}", results.len(), cfg.out.display());
    Ok(0)
}

fn cmd_gen(a: GenArgs) -> Result<i32> {
    let spec = SyntheticSpec {
        bags: a.bags,
        classes: a.classes,
        dim: a.dim,
        bag_size: (a.bag_min, a.bag_max),
    };
    if a.classes < 2 || a.dim == 0 {
        return Err(Error::Config("need classes >= 2 and dim >= 1".into()));
    }
    let w = synthetic_weights(
        a.classes,
        a.dim,
        a.separation,
        derive_seed(a.seed, &[Purpose::Generate as u64, 0]),
    );
    let data = generate_synthetic(
        &spec,
        &w,
        derive_seed(a.seed, &[Purpose::Generate as u64, 1]),
    )?;
    create_dir(&a.out)?;
    write(
        &a.out.join("features.csv"),
        &data.dataset.features_to_text(),
    )?;
    write(&a.out.join("labels.csv"), &data.dataset.labels_to_text())?;
    w.save(&a.out.join("weights.txt"))?;
    println!("wrote {} bags to {}", a.bags, a.out.display());
    Ok(0)
}

fn scaled_gradient(w: &ParamMatrix, ds: &Dataset, lambda: f64) -> ParamMatrix {
    let mut g = mml_gradient(w, ds, lambda);
    g.scale(1.01);
    g
}

fn cmd_verify(a: VerifyArgs) -> Result<i32> {
    let mut cfg = SuiteConfig::default();
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if a.inject_gradient_bug {
        cfg.mml_gradient = scaled_gradient;
    }
    let report = run_suite(&cfg)?;
    print!("{}", report.render());
    Ok(if report.all_passed() { 0 } else { 1 })
}

fn cmd_evaluate(a: EvalArgs) -> Result<i32> {
    let w = ParamMatrix::load(&a.weights)?;
    let ds = load_dataset(&a.features, &a.labels)?;
    let m = evaluate(&w, &ds, a.threshold)?;
    println!(
        "bag_accuracy={:.6} hamming_loss={:.6} avg_precision={:.6} one_error={:.6} subset_accuracy={:.6}",
        m.bag_accuracy, m.hamming_loss, m.avg_precision, m.one_error, m.subset_accuracy
    );
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(u8::from(e.use_stderr()));
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::ActiveRun(a) => cmd_active_run(a),
        Command::GenSynthetic(a) => cmd_gen(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Evaluate(a) => cmd_evaluate(a),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
