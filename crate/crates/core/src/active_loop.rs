//! The active learning loop: fit on the initial labels, then repeatedly
//! select, ask the oracle, and update the model.

use std::fmt::Write as _;

use crate::dataset::{Dataset, OracleTruth};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricsRow};
use crate::model::{ParamMatrix, DEFAULT_THRESHOLD};
use crate::rng::{derive_seed, rng_from_seed, Purpose};
use crate::selection::{select, Criterion, Selection, SelectionResult};
use crate::trainer::{bag_update, full_gd, online_update, SgdState, TrainConfig, UpdateMode};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub criterion: Criterion,
    pub train: TrainConfig,
    /// Number of queries. For `bag-all` each query is a whole bag.
    pub queries: usize,
    /// Evaluation cadence in pair-cost units.
    pub eval_every: f64,
    pub threshold: f64,
    /// Whole-bag queries cost `C / k`.
    pub cost_divisor: f64,
    pub seed: u64,
    /// Restart the SGD step counter at 1 before every query's update
    /// instead of continuing the schedule across the run.
    pub reset_sgd: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            criterion: Criterion::EglPair,
            train: TrainConfig::default(),
            queries: 100,
            eval_every: 5.0,
            threshold: DEFAULT_THRESHOLD,
            cost_divisor: 1.0,
            seed: 0,
            reset_sgd: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(self.eval_every > 0.0) || !self.eval_every.is_finite() {
            return Err(Error::Config(format!(
                "eval_every must be positive, got {}",
                self.eval_every
            )));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!(
                "threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        if !(self.cost_divisor >= 1.0) || !self.cost_divisor.is_finite() {
            return Err(Error::Config(format!(
                "k must be >= 1, got {}",
                self.cost_divisor
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    /// 1-based query index.
    pub q: usize,
    pub selection: SelectionResult,
    pub revealed: Vec<((usize, usize), bool)>,
    pub cumulative_cost: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub queries: Vec<QueryRecord>,
    pub curve: Vec<MetricsRow>,
    pub w: ParamMatrix,
    /// The training set after all reveals.
    pub train: Dataset,
}

/// Ground-truth label of `(b, c)`.
pub fn simulated_oracle(oracle: &OracleTruth, b: usize, c: usize) -> Result<bool> {
    oracle.get(b, c)
}

fn check_inputs(train: &Dataset, oracle: &OracleTruth, test: &Dataset) -> Result<()> {
    if oracle.num_bags() != train.num_bags() {
        return Err(Error::DimensionMismatch {
            expected: train.num_bags(),
            found: oracle.num_bags(),
        });
    }
    if oracle.num_classes() != train.num_classes() || test.num_classes() != train.num_classes() {
        return Err(Error::Config(format!(
            "class count mismatch: train {}, oracle {}, test {}",
            train.num_classes(),
            oracle.num_classes(),
            test.num_classes()
        )));
    }
    if test.feature_dim() != train.feature_dim() {
        return Err(Error::DimensionMismatch {
            expected: train.feature_dim(),
            found: test.feature_dim(),
        });
    }
    if !oracle.consistent_with(train) {
        return Err(Error::Config(
            "observed training labels disagree with the oracle".into(),
        ));
    }
    if !test.is_fully_labeled() {
        return Err(Error::Config("test set contains unknown labels".into()));
    }
    Ok(())
}

enum Learner {
    Batch(ParamMatrix),
    Online(SgdState),
}

impl Learner {
    fn w(&self) -> &ParamMatrix {
        match self {
            Learner::Batch(w) => w,
            Learner::Online(s) => &s.w,
        }
    }
}

/// Runs `cfg.queries` rounds against a simulated oracle. Returns the query
/// log, the learning curve on `test` and the final model.
pub fn run(
    train: &Dataset,
    oracle: &OracleTruth,
    test: &Dataset,
    cfg: &RunConfig,
) -> Result<RunOutput> {
    cfg.validate()?;
    check_inputs(train, oracle, test)?;
    let mut train = train.clone();
    let classes = train.num_classes();
    match cfg.criterion {
        Criterion::BagAll => {
            let open = (0..train.num_bags())
                .filter(|&b| !train.label_vector(b).is_complete())
                .count();
            if cfg.queries > open {
                return Err(Error::QueryBudget {
                    queries: cfg.queries,
                    available: open,
                });
            }
        }
        _ => {
            if cfg.queries > train.num_unavailable() {
                return Err(Error::QueryBudget {
                    queries: cfg.queries,
                    available: train.num_unavailable(),
                });
            }
        }
    }

    let init = full_gd(
        &train,
        &cfg.train,
        &ParamMatrix::zeros(classes, train.feature_dim()),
    )?;
    let mut learner = match cfg.train.mode {
        UpdateMode::FullGd => Learner::Batch(init.w),
        _ => Learner::Online(SgdState::for_dataset(init.w, &train, &cfg.train)?),
    };

    let mut rng = rng_from_seed(derive_seed(cfg.seed, &[Purpose::Select as u64]));
    let snapshot = |w: &ParamMatrix, cost: f64| -> Result<MetricsRow> {
        let mut row = evaluate(w, test, cfg.threshold)?;
        row.cost = cost;
        Ok(row)
    };
    let mut curve = vec![snapshot(learner.w(), 0.0)?];
    let mut records = Vec::with_capacity(cfg.queries);
    let mut cost = 0.0;
    let mut next_eval = cfg.eval_every;

    for q in 1..=cfg.queries {
        let sel = select(
            &train,
            learner.w(),
            cfg.criterion,
            cfg.cost_divisor,
            cfg.threshold,
            &mut rng,
        )?;
        let mut revealed = Vec::new();
        match sel.selection {
            Selection::Pair { bag, class } => {
                let y = simulated_oracle(oracle, bag, class)?;
                train.reveal_label(bag, class, y)?;
                revealed.push(((bag, class), y));
            }
            Selection::Bag { bag } => {
                for class in train.label_vector(bag).unlabeled() {
                    let y = simulated_oracle(oracle, bag, class)?;
                    train.reveal_label(bag, class, y)?;
                    revealed.push(((bag, class), y));
                }
            }
        }
        match &mut learner {
            Learner::Batch(w) => {
                *w = full_gd(&train, &cfg.train, w)?.w;
            }
            Learner::Online(state) => {
                if cfg.reset_sgd {
                    state.k = 1;
                }
                match sel.selection {
                    Selection::Pair { bag, class } => {
                        online_update(state, &train, bag, class, &cfg.train)?
                    }
                    Selection::Bag { bag } => bag_update(state, &train, bag, &cfg.train)?,
                }
            }
        }
        cost += sel.cost_units;
        records.push(QueryRecord {
            q,
            selection: sel,
            revealed,
            cumulative_cost: cost,
        });
        if cost >= next_eval - 1e-9 || q == cfg.queries {
            curve.push(snapshot(learner.w(), cost)?);
            while next_eval <= cost + 1e-9 {
                next_eval += cfg.eval_every;
            }
        }
    }

    let w = match learner {
        Learner::Batch(w) => w,
        Learner::Online(s) => s.w,
    };
    Ok(RunOutput {
        queries: records,
        curve,
        w,
        train,
    })
}

/// One row per revealed pair: `q,kind,bag,class,score,revealed,cost`.
/// Classes are written 1-based.
pub fn queries_csv(records: &[QueryRecord], train: &Dataset) -> String {
    let mut out = String::from("q,kind,bag,class,score,revealed,cost\n");
    for r in records {
        let kind = match r.selection.selection {
            Selection::Pair { .. } => "pair",
            Selection::Bag { .. } => "bag",
        };
        for &((b, c), y) in &r.revealed {
            writeln!(
                out,
                "{},{},{},{},{:e},{},{}",
                r.q,
                kind,
                train.bag(b).id(),
                c + 1,
                r.selection.score,
                u8::from(y),
                r.cumulative_cost
            )
            .unwrap();
        }
    }
    out
}
