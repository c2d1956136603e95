//! Parameter fitting.
//!
//! Full-batch gradient descent uses an Armijo backtracking line search. The
//! online variants take one projected step per query with the decreasing
//! schedule `η_k = c′ / (λk + c″)`; the projection radius
//!
//! ```text
//! τ = sqrt((2/λ) · max(ln C, max_b n_b / (C − 1)))
//! ```
//!
//! bounds the norm of the regularized optimum for every dataset with the
//! given `C` and largest bag size.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{Gradient, ParamMatrix};
use crate::objective::{self, DEFAULT_LAMBDA};
use crate::rng::rng_from_seed;

/// How the model is refitted after each query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateMode {
    FullGd,
    PairSgd,
    BagSgd,
}

impl FromStr for UpdateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full-gd" => Ok(UpdateMode::FullGd),
            "pair-sgd" => Ok(UpdateMode::PairSgd),
            "bag-sgd" => Ok(UpdateMode::BagSgd),
            other => Err(Error::Config(format!(
                "unknown update mode `{other}` (expected full-gd, pair-sgd or bag-sgd)"
            ))),
        }
    }
}

impl fmt::Display for UpdateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UpdateMode::FullGd => "full-gd",
            UpdateMode::PairSgd => "pair-sgd",
            UpdateMode::BagSgd => "bag-sgd",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    /// Schedule numerator `c′`.
    pub c_prime: f64,
    /// Schedule offset `c″`.
    pub c_dprime: f64,
    pub max_epochs: usize,
    pub grad_tol: f64,
    pub initial_step: f64,
    pub backtrack_shrink: f64,
    pub backtrack_slope: f64,
    pub mode: UpdateMode,
    pub steps_per_query: usize,
    /// Include `λw` in online gradients.
    pub regularize_sgd: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: DEFAULT_LAMBDA,
            c_prime: 1.0,
            c_dprime: 1.0,
            max_epochs: 2000,
            grad_tol: 1e-6,
            initial_step: 1.0,
            backtrack_shrink: 0.5,
            backtrack_slope: 1e-4,
            mode: UpdateMode::PairSgd,
            steps_per_query: 1,
            regularize_sgd: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.c_prime > 0.0) {
            return bad(format!("c_prime must be > 0, got {}", self.c_prime));
        }
        if !(self.c_dprime >= 0.0) {
            return bad(format!("c_dprime must be >= 0, got {}", self.c_dprime));
        }
        if self.lambda == 0.0 && self.c_dprime == 0.0 && self.mode != UpdateMode::FullGd {
            return bad("lambda = 0 with c_dprime = 0 makes the step size infinite".into());
        }
        if !(self.grad_tol > 0.0) {
            return bad(format!("grad_tol must be > 0, got {}", self.grad_tol));
        }
        if !(self.backtrack_shrink > 0.0 && self.backtrack_shrink < 1.0) {
            return bad(format!(
                "backtrack_shrink must lie in (0, 1), got {}",
                self.backtrack_shrink
            ));
        }
        if !(self.backtrack_slope > 0.0 && self.backtrack_slope < 1.0) {
            return bad(format!(
                "backtrack_slope must lie in (0, 1), got {}",
                self.backtrack_slope
            ));
        }
        if !(self.initial_step > 0.0) {
            return bad(format!(
                "initial_step must be > 0, got {}",
                self.initial_step
            ));
        }
        if self.steps_per_query == 0 {
            return bad("steps_per_query must be >= 1".into());
        }
        Ok(())
    }

    /// Regularization weight used inside online gradients.
    fn sgd_lambda(&self) -> f64 {
        if self.regularize_sgd {
            self.lambda
        } else {
            0.0
        }
    }

    /// `η_k = c′ / (λk + c″)`.
    pub fn step_size(&self, k: u64) -> Result<f64> {
        let denom = self.lambda * k as f64 + self.c_dprime;
        if denom <= 0.0 {
            return Err(Error::Config(
                "step size schedule divides by zero (lambda = 0 and c_dprime = 0)".into(),
            ));
        }
        Ok(self.c_prime / denom)
    }
}

/// Radius of the ball that contains the regularized optimum.
pub fn compute_tau(lambda: f64, classes: usize, max_bag_size: usize) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::Config(format!(
            "the projection radius needs lambda > 0, got {lambda}"
        )));
    }
    if classes < 2 || max_bag_size == 0 {
        return Err(Error::Config(format!(
            "need C >= 2 and a non-empty bag, got C = {classes}, max n_b = {max_bag_size}"
        )));
    }
    let bound = (classes as f64)
        .ln()
        .max(max_bag_size as f64 / (classes as f64 - 1.0));
    Ok((2.0 / lambda * bound).sqrt())
}

/// Euclidean projection onto `{w : ‖w‖ ≤ τ}`.
pub fn project(w: &ParamMatrix, tau: f64) -> ParamMatrix {
    let mut out = w.clone();
    project_in_place(&mut out, tau);
    out
}

pub fn project_in_place(w: &mut ParamMatrix, tau: f64) {
    let norm = w.norm();
    if norm > tau {
        w.scale(tau / norm);
    }
}

/// One row of a convergence trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub epoch: usize,
    pub objective: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub w: ParamMatrix,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
}

impl FitResult {
    pub fn final_objective(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |r| r.objective)
    }

    pub fn final_grad_norm(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |r| r.grad_norm)
    }
}

/// `epoch,objective,grad_norm` with full precision.
pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("epoch,objective,grad_norm\n");
    for r in trace {
        writeln!(out, "{},{:e},{:e}", r.epoch, r.objective, r.grad_norm).unwrap();
    }
    out
}

/// Gradient descent with backtracking on the full objective, warm-started at
/// `w_init`. Row 0 of the trace is the starting point.
pub fn full_gd(ds: &Dataset, cfg: &TrainConfig, w_init: &ParamMatrix) -> Result<FitResult> {
    cfg.validate()?;
    if w_init.classes() != ds.num_classes() || w_init.dim() != ds.feature_dim() {
        return Err(Error::DimensionMismatch {
            expected: ds.num_classes() * ds.feature_dim(),
            found: w_init.classes() * w_init.dim(),
        });
    }
    let lambda = cfg.lambda;
    let mut w = w_init.clone();
    let (mut f, mut g) = objective::objective_and_gradient(&w, ds, lambda);
    if !f.is_finite() {
        return Err(Error::Diverged(0));
    }
    let mut gnorm = g.norm();
    let mut trace = vec![TraceRow {
        epoch: 0,
        objective: f,
        grad_norm: gnorm,
    }];
    let mut converged = gnorm <= cfg.grad_tol;
    let mut candidate = w.clone();
    let mut last_eta = cfg.initial_step;
    for epoch in 1..=cfg.max_epochs {
        if converged {
            break;
        }
        let gsq = gnorm * gnorm;
        // each search may try up to twice the last accepted step
        let mut eta = cfg.initial_step.max(2.0 * last_eta);
        let accepted = loop {
            candidate.as_mut_slice().copy_from_slice(w.as_slice());
            candidate.add_scaled(-eta, &g);
            let f_new = objective::mml_objective(&candidate, ds, lambda);
            if f_new.is_finite() && f_new <= f - cfg.backtrack_slope * eta * gsq {
                break true;
            }
            eta *= cfg.backtrack_shrink;
            if eta * gnorm < 1e-15 * (1.0 + w.norm()) {
                break false;
            }
        };
        if !accepted {
            // no representable step decreases the objective any further
            log::debug!("line search stalled at epoch {epoch}, grad norm {gnorm:e}");
            break;
        }
        last_eta = eta;
        std::mem::swap(&mut w, &mut candidate);
        (f, g) = objective::objective_and_gradient(&w, ds, lambda);
        if !f.is_finite() {
            return Err(Error::Diverged(epoch));
        }
        gnorm = g.norm();
        trace.push(TraceRow {
            epoch,
            objective: f,
            grad_norm: gnorm,
        });
        converged = gnorm <= cfg.grad_tol;
    }
    Ok(FitResult {
        w,
        trace,
        converged,
    })
}

/// State of the online learner; the step counter persists across queries.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    pub w: ParamMatrix,
    /// Index of the next step, starting at 1.
    pub k: u64,
    /// `None` when λ = 0 and projection is disabled.
    pub tau: Option<f64>,
}

impl SgdState {
    pub fn new(w: ParamMatrix, tau: Option<f64>) -> Self {
        SgdState { w, k: 1, tau }
    }

    /// Starts at `w` with the radius implied by `ds` and `cfg.lambda`.
    pub fn for_dataset(w: ParamMatrix, ds: &Dataset, cfg: &TrainConfig) -> Result<Self> {
        let tau = if cfg.lambda > 0.0 {
            Some(compute_tau(
                cfg.lambda,
                ds.num_classes(),
                ds.max_bag_size(),
            )?)
        } else {
            log::warn!("lambda = 0: projection disabled, no norm bound applies");
            None
        };
        let mut state = SgdState::new(w, tau);
        if let Some(t) = tau {
            project_in_place(&mut state.w, t);
        }
        Ok(state)
    }
}

/// `w ← P(w − η_k g)`, `k ← k + 1`.
pub fn sgd_step(state: &mut SgdState, g: &Gradient, cfg: &TrainConfig) -> Result<()> {
    if state.k == 0 {
        return Err(Error::Config("step counter starts at 1".into()));
    }
    let eta = cfg.step_size(state.k)?;
    state.w.add_scaled(-eta, g);
    if let Some(tau) = state.tau {
        project_in_place(&mut state.w, tau);
    }
    state.k += 1;
    Ok(())
}

/// Online update after `(b, c)` was revealed in `ds`: a pair-gradient step in
/// pair mode, a whole-bag step in bag mode.
pub fn online_update(
    state: &mut SgdState,
    ds: &Dataset,
    b: usize,
    c: usize,
    cfg: &TrainConfig,
) -> Result<()> {
    let Some(label) = ds.label(b, c).value() else {
        return Err(Error::Config(format!(
            "pair (bag {b}, class {c}) must be revealed before the update"
        )));
    };
    match cfg.mode {
        UpdateMode::PairSgd => {
            for _ in 0..cfg.steps_per_query {
                let g = objective::pair_gradient(&state.w, ds.bag(b), c, label, cfg.sgd_lambda());
                sgd_step(state, &g, cfg)?;
            }
            Ok(())
        }
        UpdateMode::BagSgd => bag_update(state, ds, b, cfg),
        UpdateMode::FullGd => Err(Error::Config(
            "full-gd refits through full_gd, not online_update".into(),
        )),
    }
}

/// Step on the gradient of every available label of bag `b`.
pub fn bag_update(state: &mut SgdState, ds: &Dataset, b: usize, cfg: &TrainConfig) -> Result<()> {
    let observed: Vec<(usize, bool)> = ds.label_vector(b).observed().collect();
    for _ in 0..cfg.steps_per_query {
        let g = objective::bag_gradient(&state.w, ds.bag(b), &observed, cfg.sgd_lambda())?;
        sgd_step(state, &g, cfg)?;
    }
    Ok(())
}

/// Result of multi-epoch online training.
#[derive(Debug, Clone)]
pub struct SgdFit {
    pub state: SgdState,
    pub trace: Vec<TraceRow>,
    /// Largest `‖w‖` seen after any step.
    pub max_norm: f64,
}

/// Repeated passes of pair- or bag-level SGD over every available label,
/// in a freshly shuffled order each epoch. Trace rows hold the full
/// objective after each epoch.
pub fn sgd_epochs(
    ds: &Dataset,
    cfg: &TrainConfig,
    w_init: &ParamMatrix,
    epochs: usize,
    seed: u64,
) -> Result<SgdFit> {
    cfg.validate()?;
    let mut state = SgdState::for_dataset(w_init.clone(), ds, cfg)?;
    let mut rng = rng_from_seed(seed);
    let (pairs, _) = ds.index_sets();
    let mut bags: Vec<usize> = (0..ds.num_bags())
        .filter(|&b| ds.label_vector(b).num_available() > 0)
        .collect();
    let mut pairs = pairs;
    let record = |state: &SgdState, epoch| {
        let (f, g) = objective::objective_and_gradient(&state.w, ds, cfg.lambda);
        TraceRow {
            epoch,
            objective: f,
            grad_norm: g.norm(),
        }
    };
    let mut trace = vec![record(&state, 0)];
    let mut max_norm = state.w.norm();
    for epoch in 1..=epochs {
        match cfg.mode {
            UpdateMode::PairSgd => {
                pairs.shuffle(&mut rng);
                for &(b, c) in &pairs {
                    online_update(&mut state, ds, b, c, cfg)?;
                    max_norm = max_norm.max(state.w.norm());
                }
            }
            UpdateMode::BagSgd => {
                bags.shuffle(&mut rng);
                for &b in &bags {
                    bag_update(&mut state, ds, b, cfg)?;
                    max_norm = max_norm.max(state.w.norm());
                }
            }
            UpdateMode::FullGd => {
                return Err(Error::Config("sgd_epochs needs an SGD mode".into()));
            }
        }
        let row = record(&state, epoch);
        if !row.objective.is_finite() {
            return Err(Error::Diverged(epoch));
        }
        trace.push(row);
    }
    Ok(SgdFit {
        state,
        trace,
        max_norm,
    })
}
