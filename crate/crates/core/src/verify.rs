//! Brute-force reference computations.
//!
//! Marginals here are obtained by enumerating every joint labeling of a bag's
//! instances and applying the OR rule directly. Nothing in this module reuses
//! the closed-form path in [`crate::model`], so it can serve as an oracle for
//! it. [`run_suite`] drives the property checks behind the `verify` command.

use rand::Rng as _;

use crate::dataset::{Bag, Dataset, LabelVector, TriLabel};
use crate::error::{Error, Result};
use crate::model::{Gradient, ParamMatrix};
use crate::objective;
use crate::rng::rng_from_seed;

/// Cap on the number of joint labelings `C^{n_b}` an enumeration may visit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnumerationBudget {
    pub max_states: u64,
}

impl Default for EnumerationBudget {
    fn default() -> Self {
        EnumerationBudget {
            max_states: 100_000,
        }
    }
}

impl EnumerationBudget {
    fn check(&self, classes: usize, n: usize) -> Result<()> {
        let needed = (classes as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
        if self.max_states == 0 || needed > self.max_states as u128 {
            return Err(Error::BudgetExceeded {
                needed,
                budget: self.max_states,
            });
        }
        Ok(())
    }
}

/// Plain softmax, written out independently of the model module.
fn posterior(w: &ParamMatrix, x: &[f64]) -> Vec<f64> {
    let scores: Vec<f64> = (0..w.classes())
        .map(|c| w.row(c).iter().zip(x).map(|(a, b)| a * b).sum())
        .collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Calls `visit(labeling, probability)` for every joint instance labeling.
fn enumerate(w: &ParamMatrix, bag: &Bag, mut visit: impl FnMut(&[usize], f64)) {
    let classes = w.classes();
    let post: Vec<Vec<f64>> = bag.instances().map(|x| posterior(w, x)).collect();
    let n = post.len();
    let mut labeling = vec![0usize; n];
    loop {
        let prob: f64 = labeling
            .iter()
            .enumerate()
            .map(|(i, &y)| post[i][y])
            .product();
        visit(&labeling, prob);
        // odometer increment
        let mut k = 0;
        loop {
            if k == n {
                return;
            }
            labeling[k] += 1;
            if labeling[k] < classes {
                break;
            }
            labeling[k] = 0;
            k += 1;
        }
    }
}

/// OR rule: `P(Y_t = y | labeling)` is an indicator.
fn or_rule(labeling: &[usize], t: usize, y: bool) -> f64 {
    let present = labeling.contains(&t);
    if present == y {
        1.0
    } else {
        0.0
    }
}

/// `P(Y_bt = y | X_b, w)` by summing over all `C^{n_b}` labelings.
pub fn bruteforce_marginal(
    w: &ParamMatrix,
    bag: &Bag,
    t: usize,
    y: bool,
    budget: EnumerationBudget,
) -> Result<f64> {
    budget.check(w.classes(), bag.len())?;
    let mut total = 0.0;
    enumerate(w, bag, |lab, p| total += or_rule(lab, t, y) * p);
    Ok(total)
}

/// `log Σ_{y_b} Π_{c∈S_b} P(Y_bc | y_b) Π_j P(y_bj | x_bj, w)`, the joint
/// single-bag log-likelihood without the `log P(X_b)` constant.
pub fn bruteforce_joint_loglik(
    w: &ParamMatrix,
    bag: &Bag,
    observed: &[(usize, bool)],
    budget: EnumerationBudget,
) -> Result<f64> {
    budget.check(w.classes(), bag.len())?;
    let mut total = 0.0;
    enumerate(w, bag, |lab, p| {
        let label_prob: f64 = observed.iter().map(|&(c, y)| or_rule(lab, c, y)).product();
        total += label_prob * p;
    });
    Ok(total.ln())
}

/// Coordinate-wise central differences of `f` at `w`.
pub fn finite_diff_gradient(
    f: impl Fn(&ParamMatrix) -> f64,
    w: &ParamMatrix,
    step: f64,
) -> Result<Gradient> {
    if !(step > 0.0) {
        return Err(Error::Config(format!("step must be positive, got {step}")));
    }
    let mut probe = w.clone();
    let mut g = ParamMatrix::zeros(w.classes(), w.dim());
    for k in 0..w.as_slice().len() {
        let orig = probe.as_slice()[k];
        probe.as_mut_slice()[k] = orig + step;
        let up = f(&probe);
        probe.as_mut_slice()[k] = orig - step;
        let down = f(&probe);
        probe.as_mut_slice()[k] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite("finite-difference evaluation"));
        }
        g.as_mut_slice()[k] = (up - down) / (2.0 * step);
    }
    Ok(g)
}

/// Default finite-difference step and tolerances.
pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-5;
pub const FD_ABS_TOL: f64 = 1e-8;

/// Gradient mismatch measured as `‖g − g_fd‖ / max(‖g_fd‖, abs_tol / rel_tol)`,
/// so the check is relative away from zero and absolute near it.
pub fn gradient_discrepancy(analytic: &Gradient, numeric: &Gradient) -> f64 {
    let mut diff = analytic.clone();
    diff.add_scaled(-1.0, numeric);
    diff.norm() / numeric.norm().max(FD_ABS_TOL / FD_REL_TOL)
}

/// A random small problem used by the property checks.
#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub w: ParamMatrix,
    pub bag: Bag,
}

/// Draws `w` with entries in `[-scale, scale]` and a bag of standard-uniform
/// features in `[-1, 1]`.
pub fn random_instance(
    rng: &mut crate::rng::Rng,
    classes: usize,
    n: usize,
    dim: usize,
    scale: f64,
) -> RandomInstance {
    let data = (0..classes * dim)
        .map(|_| rng.random_range(-scale..=scale))
        .collect();
    let w = ParamMatrix::from_flat(classes, dim, data).expect("finite");
    let instances = (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect())
        .collect();
    RandomInstance {
        w,
        bag: Bag::new("r", instances).expect("non-empty"),
    }
}

/// Random `(C, n_b, d)` with `C ∈ [2, max_c]`, `n_b ∈ [1, max_n]`, `d ∈ [1, max_d]`.
pub fn random_shape(
    rng: &mut crate::rng::Rng,
    max_c: usize,
    max_n: usize,
    max_d: usize,
) -> (usize, usize, usize) {
    (
        rng.random_range(2..=max_c),
        rng.random_range(1..=max_n),
        rng.random_range(1..=max_d),
    )
}

/// Random labels for a small dataset: each `(b, c)` observed with
/// probability 0.6.
pub fn random_dataset(
    rng: &mut crate::rng::Rng,
    bags: usize,
    classes: usize,
    max_n: usize,
    dim: usize,
) -> Dataset {
    let mut bag_vec = Vec::with_capacity(bags);
    let mut labels = Vec::with_capacity(bags);
    for b in 0..bags {
        let n = rng.random_range(1..=max_n);
        let instances = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect())
            .collect();
        bag_vec.push(Bag::new(format!("r{b}"), instances).expect("non-empty"));
        labels.push(LabelVector::new(
            (0..classes)
                .map(|_| {
                    if rng.random_bool(0.6) {
                        TriLabel::known(rng.random_bool(0.5))
                    } else {
                        TriLabel::Unknown
                    }
                })
                .collect(),
        ));
    }
    Dataset::new(bag_vec, labels).expect("consistent shapes")
}

/// The implementation of the full-objective gradient under test; swappable
/// so the suite itself can be checked against a deliberately broken one.
pub type MmlGradientFn = fn(&ParamMatrix, &Dataset, f64) -> Gradient;

#[derive(Debug, Clone)]
pub struct SuiteConfig {
    pub seed: u64,
    pub enumeration_draws: usize,
    pub gradient_draws: usize,
    pub mml_gradient: MmlGradientFn,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            seed: 20_240_101,
            enumeration_draws: 200,
            gradient_draws: 100,
            mml_gradient: objective::mml_gradient,
        }
    }
}

/// Outcome of one property: the worst discrepancy seen against its tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyResult {
    pub name: &'static str,
    pub worst: f64,
    pub tolerance: f64,
    pub cases: usize,
}

impl PropertyResult {
    pub fn passed(&self) -> bool {
        self.worst <= self.tolerance
    }
}

#[derive(Debug, Clone, Default)]
pub struct VerifyReport {
    pub properties: Vec<PropertyResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.properties.iter().all(PropertyResult::passed)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for p in &self.properties {
            out.push_str(&format!(
                "{} {:<34} worst={:.3e} tol={:.1e} cases={}\n",
                if p.passed() { "PASS" } else { "FAIL" },
                p.name,
                p.worst,
                p.tolerance,
                p.cases
            ));
        }
        out
    }
}

struct Tracker {
    name: &'static str,
    tolerance: f64,
    worst: f64,
    cases: usize,
}

impl Tracker {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Tracker {
            name,
            tolerance,
            worst: 0.0,
            cases: 0,
        }
    }

    fn record(&mut self, discrepancy: f64) {
        self.cases += 1;
        // NaN counts as a failure
        if discrepancy.is_nan() || discrepancy > self.worst {
            self.worst = if discrepancy.is_nan() {
                f64::INFINITY
            } else {
                discrepancy
            };
        }
    }

    fn finish(self) -> PropertyResult {
        PropertyResult {
            name: self.name,
            worst: self.worst,
            tolerance: self.tolerance,
            cases: self.cases,
        }
    }
}

/// Runs the enumeration and finite-difference properties.
pub fn run_suite(cfg: &SuiteConfig) -> Result<VerifyReport> {
    let budget = EnumerationBudget::default();
    let mut rng = rng_from_seed(cfg.seed);

    let mut marginal = Tracker::new("closed-form vs enumerated marginal", 1e-10);
    let mut loss = Tracker::new("pair loss vs -log enumerated", 1e-10);
    for _ in 0..cfg.enumeration_draws {
        let (c, n, d) = random_shape(&mut rng, 4, 6, 8);
        let inst = random_instance(&mut rng, c, n, d, 2.0);
        for t in 0..c {
            let closed = crate::model::bag_class_prob_positive(&inst.w, &inst.bag, t);
            let p1 = bruteforce_marginal(&inst.w, &inst.bag, t, true, budget)?;
            marginal.record((closed - p1).abs());
            let label = rng.random_bool(0.5);
            if crate::model::bag_class_logprob(&inst.w, &inst.bag, t).is_clamped() {
                continue;
            }
            let enumerated = bruteforce_marginal(&inst.w, &inst.bag, t, label, budget)?;
            loss.record(
                (objective::pair_loss(&inst.w, &inst.bag, t, label) + enumerated.ln()).abs(),
            );
        }
    }

    let mut mml = Tracker::new("mml gradient vs finite differences", FD_REL_TOL);
    let mut pair = Tracker::new("pair gradient vs finite differences", FD_REL_TOL);
    let mut bag = Tracker::new("bag gradient vs finite differences", FD_REL_TOL);
    let mut logp = Tracker::new("log-marginal gradient vs finite diff", FD_REL_TOL);
    for _ in 0..cfg.gradient_draws {
        let (c, n, d) = random_shape(&mut rng, 5, 6, 8);
        let lambda = if rng.random_bool(0.5) { 0.0 } else { 0.1 };
        let ds = random_dataset(&mut rng, 3, c, n, d);
        let inst = random_instance(&mut rng, c, n, d, 1.0);
        let w = &inst.w;

        let analytic = (cfg.mml_gradient)(w, &ds, lambda);
        let numeric =
            finite_diff_gradient(|v| objective::mml_objective(v, &ds, lambda), w, FD_STEP)?;
        mml.record(gradient_discrepancy(&analytic, &numeric));

        let t = rng.random_range(0..c);
        let label = rng.random_bool(0.5);
        let analytic = objective::pair_gradient(w, &inst.bag, t, label, lambda);
        let numeric = finite_diff_gradient(
            |v| objective::pair_loss(v, &inst.bag, t, label) + 0.5 * lambda * v.norm_sq(),
            w,
            FD_STEP,
        )?;
        pair.record(gradient_discrepancy(&analytic, &numeric));

        let analytic = objective::logprob_gradient_for_label(w, &inst.bag, t, label);
        let numeric = finite_diff_gradient(
            |v| -objective::pair_loss(v, &inst.bag, t, label),
            w,
            FD_STEP,
        )?;
        logp.record(gradient_discrepancy(&analytic, &numeric));

        let mut observed: Vec<(usize, bool)> = Vec::new();
        for k in 0..c {
            if rng.random_bool(0.7) {
                observed.push((k, rng.random_bool(0.5)));
            }
        }
        if !observed.is_empty() {
            let analytic = objective::bag_gradient(w, &inst.bag, &observed, lambda)?;
            let numeric = finite_diff_gradient(
                |v| {
                    observed
                        .iter()
                        .map(|&(k, l)| objective::pair_loss(v, &inst.bag, k, l))
                        .sum::<f64>()
                        + 0.5 * lambda * v.norm_sq()
                },
                w,
                FD_STEP,
            )?;
            bag.record(gradient_discrepancy(&analytic, &numeric));
        }
    }

    Ok(VerifyReport {
        properties: vec![
            marginal.finish(),
            loss.finish(),
            mml.finish(),
            pair.finish(),
            bag.finish(),
            logp.finish(),
        ],
    })
}
