//! Experiment driver behind `active-run`: a flat `key = value` config,
//! fold × seed orchestration and CSV output.

use std::fs;
use std::path::{Path, PathBuf};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::active_loop::{queries_csv, run, RunConfig, RunOutput};
use crate::dataset::{
    cross_validation_splits, generate_synthetic, load_dataset, mask_labels, synthetic_weights,
    Dataset, MaskPolicy, OracleTruth, Standardizer, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::metrics::{aggregate_csv, aggregate_runs, curves_csv};
use crate::rng::{derive_seed, Purpose};
use crate::selection::Criterion;
use crate::trainer::{TrainConfig, UpdateMode};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    /// Separate test files, used when `folds = 1`.
    pub test_features: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub bags: usize,
    /// Synthetic test bags, used when `folds = 1`.
    pub test_bags: usize,
    pub classes: usize,
    pub dim: usize,
    pub bag_min: usize,
    pub bag_max: usize,
    pub separation: f64,
    pub criterion: Criterion,
    pub mode: UpdateMode,
    pub queries: usize,
    pub folds: usize,
    /// Number of repetitions per fold.
    pub seeds: usize,
    pub seed: u64,
    pub lambda: f64,
    pub c_prime: f64,
    pub c_dprime: f64,
    pub max_epochs: usize,
    pub grad_tol: f64,
    pub steps_per_query: usize,
    pub regularize_sgd: bool,
    pub reset_sgd: bool,
    pub threshold: f64,
    pub k: f64,
    pub init_fraction: f64,
    pub eval_every: f64,
    pub standardize: bool,
    pub subset_accuracy: bool,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let run = RunConfig::default();
        ExperimentConfig {
            features: None,
            labels: None,
            test_features: None,
            test_labels: None,
            bags: 200,
            test_bags: 100,
            classes: 5,
            dim: 10,
            bag_min: 2,
            bag_max: 8,
            separation: 2.0,
            criterion: run.criterion,
            mode: train.mode,
            queries: run.queries,
            folds: 1,
            seeds: 1,
            seed: 0,
            lambda: train.lambda,
            c_prime: train.c_prime,
            c_dprime: train.c_dprime,
            max_epochs: train.max_epochs,
            grad_tol: train.grad_tol,
            steps_per_query: train.steps_per_query,
            regularize_sgd: train.regularize_sgd,
            reset_sgd: run.reset_sgd,
            threshold: run.threshold,
            k: run.cost_divisor,
            init_fraction: 0.05,
            eval_every: run.eval_every,
            standardize: false,
            subset_accuracy: false,
            out: PathBuf::from("out"),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!(
            "bad value `{value}` for `{key}` (expected true or false)"
        ))),
    }
}

impl ExperimentConfig {
    /// Sets one field by name. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "features" => self.features = Some(v.into()),
            "labels" => self.labels = Some(v.into()),
            "test_features" => self.test_features = Some(v.into()),
            "test_labels" => self.test_labels = Some(v.into()),
            "bags" => self.bags = parse(key, v)?,
            "test_bags" => self.test_bags = parse(key, v)?,
            "classes" => self.classes = parse(key, v)?,
            "dim" => self.dim = parse(key, v)?,
            "bag_min" => self.bag_min = parse(key, v)?,
            "bag_max" => self.bag_max = parse(key, v)?,
            "separation" => self.separation = parse(key, v)?,
            "criterion" => self.criterion = v.parse()?,
            "mode" => self.mode = v.parse()?,
            "queries" => self.queries = parse(key, v)?,
            "folds" => self.folds = parse(key, v)?,
            "seeds" => self.seeds = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "lambda" => self.lambda = parse(key, v)?,
            "c_prime" => self.c_prime = parse(key, v)?,
            "c_dprime" => self.c_dprime = parse(key, v)?,
            "max_epochs" => self.max_epochs = parse(key, v)?,
            "grad_tol" => self.grad_tol = parse(key, v)?,
            "steps_per_query" => self.steps_per_query = parse(key, v)?,
            "regularize_sgd" => self.regularize_sgd = parse_bool(key, v)?,
            "reset_sgd" => self.reset_sgd = parse_bool(key, v)?,
            "threshold" => self.threshold = parse(key, v)?,
            "k" => self.k = parse(key, v)?,
            "init_fraction" => self.init_fraction = parse(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "standardize" => self.standardize = parse_bool(key, v)?,
            "subset_accuracy" => self.subset_accuracy = parse_bool(key, v)?,
            "out" => self.out = v.into(),
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, path: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: format!("expected `key = value`, found `{line}`"),
                });
            };
            self.set(key, value).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(&text, path)?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lambda: self.lambda,
            c_prime: self.c_prime,
            c_dprime: self.c_dprime,
            max_epochs: self.max_epochs,
            grad_tol: self.grad_tol,
            mode: self.mode,
            steps_per_query: self.steps_per_query,
            regularize_sgd: self.regularize_sgd,
            ..TrainConfig::default()
        }
    }

    pub fn run_config(&self, seed: u64) -> RunConfig {
        RunConfig {
            criterion: self.criterion,
            train: self.train_config(),
            queries: self.queries,
            eval_every: self.eval_every,
            threshold: self.threshold,
            cost_divisor: self.k,
            seed,
            reset_sgd: self.reset_sgd,
        }
    }

    fn synthetic(&self) -> bool {
        self.features.is_none() && self.labels.is_none()
    }

    /// Checks every field before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.run_config(self.seed).validate()?;
        if self.seeds == 0 {
            return Err(Error::Config("seeds must be at least 1".into()));
        }
        if self.folds == 0 {
            return Err(Error::Config("folds must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.init_fraction) {
            return Err(Error::Config(format!(
                "init_fraction must lie in [0, 1], got {}",
                self.init_fraction
            )));
        }
        if self.synthetic() {
            if self.classes < 2 || self.dim == 0 || self.bags == 0 {
                return Err(Error::Config(
                    "synthetic data needs classes >= 2, dim >= 1, bags >= 1".into(),
                ));
            }
            if self.bag_min == 0 || self.bag_max < self.bag_min {
                return Err(Error::Config(format!(
                    "invalid bag size range [{}, {}]",
                    self.bag_min, self.bag_max
                )));
            }
            if !(self.separation >= 0.0) || !self.separation.is_finite() {
                return Err(Error::Config(format!(
                    "separation must be >= 0, got {}",
                    self.separation
                )));
            }
            if self.folds == 1 && self.test_bags == 0 {
                return Err(Error::Config("folds = 1 needs test_bags > 0".into()));
            }
            if self.folds > self.bags {
                return Err(Error::Config(format!(
                    "folds must lie in [1, {}]",
                    self.bags
                )));
            }
        } else {
            if self.features.is_none() || self.labels.is_none() {
                return Err(Error::Config(
                    "both `features` and `labels` are required".into(),
                ));
            }
            if self.folds == 1 && (self.test_features.is_none() || self.test_labels.is_none()) {
                return Err(Error::Config(
                    "folds = 1 needs `test_features` and `test_labels`".into(),
                ));
            }
        }
        Ok(())
    }

    fn spec(&self, bags: usize) -> SyntheticSpec {
        SyntheticSpec {
            bags,
            classes: self.classes,
            dim: self.dim,
            bag_size: (self.bag_min, self.bag_max),
        }
    }
}

/// A fully labeled pool plus, when no folds are used, a fixed test set.
pub struct DataSource {
    pub pool: Dataset,
    pub truth: OracleTruth,
    pub test: Option<Dataset>,
}

fn fully_labeled(path: &Path, ds: &Dataset) -> Result<OracleTruth> {
    OracleTruth::from_dataset(ds).map_err(|_| {
        Error::Config(format!(
            "`{}` must be fully labeled to act as the oracle",
            path.display()
        ))
    })
}

pub fn load_source(cfg: &ExperimentConfig) -> Result<DataSource> {
    if cfg.synthetic() {
        let w_true = synthetic_weights(
            cfg.classes,
            cfg.dim,
            cfg.separation,
            derive_seed(cfg.seed, &[Purpose::Generate as u64, 0]),
        );
        let pool = generate_synthetic(
            &cfg.spec(cfg.bags),
            &w_true,
            derive_seed(cfg.seed, &[Purpose::Generate as u64, 1]),
        )?;
        let test = if cfg.folds == 1 {
            let t = generate_synthetic(
                &cfg.spec(cfg.test_bags),
                &w_true,
                derive_seed(cfg.seed, &[Purpose::Generate as u64, 2]),
            )?;
            Some(t.dataset)
        } else {
            None
        };
        return Ok(DataSource {
            pool: pool.dataset,
            truth: pool.truth,
            test,
        });
    }
    let (features, labels) = (cfg.features.as_ref().unwrap(), cfg.labels.as_ref().unwrap());
    let pool = load_dataset(features, labels)?;
    let truth = fully_labeled(labels, &pool)?;
    let test = match (&cfg.test_features, &cfg.test_labels) {
        (Some(f), Some(l)) if cfg.folds == 1 => {
            let t = load_dataset(f, l)?;
            fully_labeled(l, &t)?;
            Some(t)
        }
        _ => None,
    };
    Ok(DataSource { pool, truth, test })
}

/// One fold × seed run and its identifiers.
pub struct RunResult {
    pub fold: usize,
    pub seed_index: usize,
    pub output: RunOutput,
}

fn one_run(
    cfg: &ExperimentConfig,
    src: &DataSource,
    splits: &[(Vec<usize>, Vec<usize>)],
    fold: usize,
    s: usize,
) -> Result<RunResult> {
    let (train_bags, truth, mut test) = match &src.test {
        Some(test) => (src.pool.bags().to_vec(), src.truth.clone(), test.clone()),
        None => {
            let (tr, te) = &splits[fold];
            (
                src.pool.subset(tr)?.bags().to_vec(),
                src.truth.subset(tr),
                src.pool.subset(te)?,
            )
        }
    };
    let path = [fold as u64, s as u64];
    let mask_seed = derive_seed(cfg.seed, &[path[0], path[1], Purpose::Mask as u64]);
    let mut train = mask_labels(
        &train_bags,
        &truth,
        MaskPolicy::Fraction(cfg.init_fraction),
        mask_seed,
    )?;
    if cfg.standardize {
        let z = Standardizer::fit(&train);
        train = z.apply(&train);
        test = z.apply(&test);
    }
    let run_seed = derive_seed(cfg.seed, &path);
    let output = run(&train, &truth, &test, &cfg.run_config(run_seed))?;
    Ok(RunResult {
        fold,
        seed_index: s,
        output,
    })
}

/// Runs every fold × seed, in parallel when enabled, and returns results in
/// (fold, seed) order.
pub fn run_all(cfg: &ExperimentConfig, src: &DataSource) -> Result<Vec<RunResult>> {
    let splits = if src.test.is_none() {
        cross_validation_splits(
            src.pool.num_bags(),
            cfg.folds,
            derive_seed(cfg.seed, &[Purpose::Split as u64]),
        )?
    } else {
        Vec::new()
    };
    let folds = if src.test.is_some() { 1 } else { cfg.folds };
    let jobs: Vec<(usize, usize)> = (0..folds)
        .flat_map(|f| (0..cfg.seeds).map(move |s| (f, s)))
        .collect();
    #[cfg(feature = "parallel")]
    let results: Vec<Result<RunResult>> = jobs
        .par_iter()
        .map(|&(f, s)| one_run(cfg, src, &splits, f, s))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<RunResult>> = jobs
        .iter()
        .map(|&(f, s)| one_run(cfg, src, &splits, f, s))
        .collect();
    results.into_iter().collect()
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Validates, runs and writes `queries_f{f}_s{s}.csv`,
/// `curves_f{f}_s{s}.csv` and `curves_mean.csv` under `cfg.out`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunResult>> {
    cfg.validate()?;
    let src = load_source(cfg)?;
    let results = run_all(cfg, &src)?;
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    for r in &results {
        let tag = format!("f{}_s{}", r.fold, r.seed_index);
        write(
            &cfg.out.join(format!("queries_{tag}.csv")),
            &queries_csv(&r.output.queries, &r.output.train),
        )?;
        write(
            &cfg.out.join(format!("curves_{tag}.csv")),
            &curves_csv(&r.output.curve, cfg.subset_accuracy),
        )?;
    }
    let curves: Vec<_> = results.iter().map(|r| r.output.curve.clone()).collect();
    write(
        &cfg.out.join("curves_mean.csv"),
        &aggregate_csv(&aggregate_runs(&curves)?),
    )?;
    Ok(results)
}
