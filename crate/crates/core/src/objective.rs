//! Marginal maximum-likelihood objective and its exact gradients.
//!
//! Each observed label contributes the negative log marginal
//!
//! ```text
//! f_bc(w, 0) = −A_bc
//! f_bc(w, 1) = −log(1 − exp(A_bc))
//! ```
//!
//! and the full objective averages these over the `|L| = Σ_b |S_b|` observed
//! labels, plus `(λ/2)‖w‖²`.
//!
//! With `p_i = P(y_bi = t)` and `p_ic = P(y_bi = c)`,
//!
//! ```text
//! ∇_{w_c} A_bt = Σ_i −p_i · (1[c = t] − 1[c ≠ t] · p_ic / (1 − p_i)) · x_bi
//! ```
//!
//! so `∇ log P(Y_bt = 0) = ∇A_bt` and
//! `∇ log P(Y_bt = 1) = −(P(Y_bt = 0) / P(Y_bt = 1)) · ∇A_bt`.
//! Where `A_bt` is clamped the objective is locally flat and the gradient is
//! zero.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::dataset::{Bag, Dataset};
use crate::error::{Error, Result};
use crate::model::{BagEval, Gradient, ParamMatrix};

/// Default quadratic regularization weight.
pub const DEFAULT_LAMBDA: f64 = 1e-3;

/// Adds `scale · ∇A_bt` to `out`.
fn add_log_neg_gradient(eval: &BagEval, bag: &Bag, t: usize, scale: f64, out: &mut Gradient) {
    let classes = out.classes();
    for (i, x) in bag.instances().enumerate() {
        let p_t = eval.log_post(i, t).exp();
        let log_not_t = eval.log_not(i, t);
        for c in 0..classes {
            let coeff = if c == t {
                -p_t
            } else {
                p_t * (eval.log_post(i, c) - log_not_t).exp()
            };
            let k = scale * coeff;
            if k != 0.0 {
                for (o, v) in out.row_mut(c).iter_mut().zip(x) {
                    *o += k * v;
                }
            }
        }
    }
}

/// Adds `scale · ∇ log P(Y_bt = label)` to `out`.
pub(crate) fn add_log_marginal_gradient(
    eval: &BagEval,
    bag: &Bag,
    t: usize,
    label: bool,
    scale: f64,
    out: &mut Gradient,
) {
    let a = eval.log_neg(t);
    if a.is_clamped() {
        return;
    }
    let factor = if label {
        -a.prob_negative() / a.prob_positive()
    } else {
        1.0
    };
    add_log_neg_gradient(eval, bag, t, scale * factor, out);
}

/// `∇_w A_bt` for a single bag and class.
pub fn log_neg_gradient(w: &ParamMatrix, bag: &Bag, t: usize) -> Gradient {
    let eval = BagEval::new(w, bag);
    let mut g = ParamMatrix::zeros(w.classes(), w.dim());
    if !eval.log_neg(t).is_clamped() {
        add_log_neg_gradient(&eval, bag, t, 1.0, &mut g);
    }
    g
}

/// `f_bc(w, label)`, the negative log marginal of one observed label.
pub fn pair_loss(w: &ParamMatrix, bag: &Bag, c: usize, label: bool) -> f64 {
    -crate::model::bag_class_logprob(w, bag, c).log_prob(label)
}

/// `∇ log P(Y_bc = label | X_b, w)`, no regularizer.
pub fn logprob_gradient_for_label(w: &ParamMatrix, bag: &Bag, c: usize, label: bool) -> Gradient {
    let eval = BagEval::new(w, bag);
    let mut g = ParamMatrix::zeros(w.classes(), w.dim());
    add_log_marginal_gradient(&eval, bag, c, label, 1.0, &mut g);
    g
}

/// `∇ f_bc(w, label) + λw` for a single queried pair.
pub fn pair_gradient(w: &ParamMatrix, bag: &Bag, c: usize, label: bool, lambda: f64) -> Gradient {
    let eval = BagEval::new(w, bag);
    let mut g = ParamMatrix::zeros(w.classes(), w.dim());
    add_log_marginal_gradient(&eval, bag, c, label, -1.0, &mut g);
    g.add_scaled(lambda, w);
    g
}

/// `Σ_{c∈S_b} ∇ f_bc(w, Y_bc) + λw` over the given observed labels of one bag.
pub fn bag_gradient(
    w: &ParamMatrix,
    bag: &Bag,
    labels: &[(usize, bool)],
    lambda: f64,
) -> Result<Gradient> {
    if labels.is_empty() {
        return Err(Error::Config(format!(
            "bag `{}` has no available labels",
            bag.id()
        )));
    }
    let eval = BagEval::new(w, bag);
    let mut g = ParamMatrix::zeros(w.classes(), w.dim());
    for &(c, label) in labels {
        add_log_marginal_gradient(&eval, bag, c, label, -1.0, &mut g);
    }
    g.add_scaled(lambda, w);
    Ok(g)
}

const CHUNK: usize = 16;

/// Unregularized loss sum and gradient sum over a contiguous run of bags.
fn chunk_terms(
    w: &ParamMatrix,
    ds: &Dataset,
    range: std::ops::Range<usize>,
    with_gradient: bool,
) -> (f64, Option<Gradient>) {
    let mut loss = 0.0;
    let mut grad = with_gradient.then(|| ParamMatrix::zeros(w.classes(), w.dim()));
    for b in range {
        let lv = ds.label_vector(b);
        if lv.num_available() == 0 {
            continue;
        }
        let bag = ds.bag(b);
        let eval = BagEval::new(w, bag);
        for (c, label) in lv.observed() {
            loss -= eval.log_neg(c).log_prob(label);
            if let Some(g) = grad.as_mut() {
                add_log_marginal_gradient(&eval, bag, c, label, -1.0, g);
            }
        }
    }
    (loss, grad)
}

/// Per-chunk partial sums, reduced in chunk order so results do not depend
/// on thread scheduling.
fn summed_terms(w: &ParamMatrix, ds: &Dataset, with_gradient: bool) -> (f64, Option<Gradient>) {
    let n = ds.num_bags();
    let ranges: Vec<_> = (0..n.div_ceil(CHUNK))
        .map(|k| k * CHUNK..((k + 1) * CHUNK).min(n))
        .collect();
    #[cfg(feature = "parallel")]
    let parts: Vec<_> = ranges
        .into_par_iter()
        .map(|r| chunk_terms(w, ds, r, with_gradient))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<_> = ranges
        .into_iter()
        .map(|r| chunk_terms(w, ds, r, with_gradient))
        .collect();

    let mut loss = 0.0;
    let mut grad = with_gradient.then(|| ParamMatrix::zeros(w.classes(), w.dim()));
    for (l, g) in parts {
        loss += l;
        if let (Some(acc), Some(g)) = (grad.as_mut(), g) {
            acc.add_scaled(1.0, &g);
        }
    }
    (loss, grad)
}

/// Regularized, label-count-normalized negative marginal log-likelihood.
pub fn mml_objective(w: &ParamMatrix, ds: &Dataset, lambda: f64) -> f64 {
    let n = ds.num_available();
    let reg = 0.5 * lambda * w.norm_sq();
    if n == 0 {
        return reg;
    }
    summed_terms(w, ds, false).0 / n as f64 + reg
}

/// Exact gradient of [`mml_objective`].
pub fn mml_gradient(w: &ParamMatrix, ds: &Dataset, lambda: f64) -> Gradient {
    objective_and_gradient(w, ds, lambda).1
}

/// [`mml_objective`] and [`mml_gradient`] from one pass over the data.
pub fn objective_and_gradient(w: &ParamMatrix, ds: &Dataset, lambda: f64) -> (f64, Gradient) {
    let n = ds.num_available();
    let mut value = 0.5 * lambda * w.norm_sq();
    let mut grad = ParamMatrix::zeros(w.classes(), w.dim());
    if n > 0 {
        let (loss, g) = summed_terms(w, ds, true);
        value += loss / n as f64;
        grad.add_scaled(1.0 / n as f64, &g.expect("gradient requested"));
    }
    grad.add_scaled(lambda, w);
    (value, grad)
}
