//! Instance-level multinomial logistic model and the bag-class probabilities
//! it induces under the OR rule.
//!
//! Every instance `x` in a bag carries a latent class drawn from
//! `softmax(w_1·x, ..., w_C·x)`. A bag is positive for class `t` when at
//! least one of its instances has latent class `t`, so
//!
//! ```text
//! A_bt        = Σ_i log P(y_bi ≠ t)
//! P(Y_bt = 0) = exp(A_bt)
//! P(Y_bt = 1) = 1 − exp(A_bt)
//! ```
//!
//! All quantities are computed in log space. `A_bt` is clamped to
//! `[ln ε, ln(1 − ε)]` with `ε = PROB_FLOOR` so both outcome probabilities
//! stay strictly inside `(0, 1)`.

use std::fmt::Write as _;
use std::path::Path;

use crate::dataset::Bag;
use crate::error::{Error, Result};

/// Floor applied to both `P(Y_bt = 0)` and `P(Y_bt = 1)`.
pub const PROB_FLOOR: f64 = 1e-12;

/// Default decision threshold for bag-level prediction.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// `ln ε`, the lower clamp of `A_bt`.
pub fn log_floor() -> f64 {
    PROB_FLOOR.ln()
}

/// `ln(1 − ε)`, the upper clamp of `A_bt`.
pub fn log_ceiling() -> f64 {
    (-PROB_FLOOR).ln_1p()
}

/// One weight vector per class, stored row-major as a `C × d` matrix.
///
/// Gradients share this representation.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamMatrix {
    classes: usize,
    dim: usize,
    data: Vec<f64>,
}

/// Gradients of scalar objectives with respect to the parameters.
pub type Gradient = ParamMatrix;

impl ParamMatrix {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        ParamMatrix {
            classes,
            dim,
            data: vec![0.0; classes * dim],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let classes = rows.len();
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(classes * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            data.extend(row);
        }
        Self::from_flat(classes, dim, data)
    }

    pub fn from_flat(classes: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != classes * dim {
            return Err(Error::DimensionMismatch {
                expected: classes * dim,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter matrix"));
        }
        Ok(ParamMatrix { classes, dim, data })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, c: usize) -> &[f64] {
        &self.data[c * self.dim..(c + 1) * self.dim]
    }

    pub fn row_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.dim..(c + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &ParamMatrix) -> bool {
        self.classes == other.classes && self.dim == other.dim
    }

    /// ℓ2 norm of the flattened matrix.
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn dot(&self, other: &ParamMatrix) -> f64 {
        debug_assert!(self.same_shape(other));
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &ParamMatrix) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    /// Sum of the class rows, a `d`-vector.
    pub fn row_sum(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for c in 0..self.classes {
            for (o, v) in out.iter_mut().zip(self.row(c)) {
                *o += v;
            }
        }
        out
    }

    /// Writes one line per class, `c,w_c1,...,w_cd`, classes 1-based.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in 0..self.classes {
            write!(out, "{}", c + 1).unwrap();
            for v in self.row(c) {
                write!(out, ",{v:e}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                path: origin.to_path_buf(),
                line: lineno + 1,
                msg,
            };
            let mut fields = line.split(',').map(str::trim);
            let class: usize = fields
                .next()
                .unwrap_or_default()
                .parse()
                .map_err(|_| parse_err("class index is not an integer".into()))?;
            let values = fields
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| parse_err(format!("bad weight `{f}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push((class, values));
        }
        for (expected, (class, _)) in rows.iter().enumerate() {
            if *class != expected + 1 {
                return Err(Error::Parse {
                    path: origin.to_path_buf(),
                    line: expected + 1,
                    msg: format!("expected class {} , found {class}", expected + 1),
                });
            }
        }
        ParamMatrix::from_rows(rows.into_iter().map(|(_, r)| r).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }
}

/// Numerically stable `log Σ exp(v)`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `log Σ_{k≠skip} exp(v_k)`.
fn log_sum_exp_except(values: &[f64], skip: usize) -> f64 {
    let max = values
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != skip)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != skip)
        .map(|(_, &v)| (v - max).exp())
        .sum();
    max + sum.ln()
}

fn class_scores_into(w: &ParamMatrix, x: &[f64], out: &mut [f64]) {
    for (c, s) in out.iter_mut().enumerate() {
        *s = w.row(c).iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

fn check_dim(w: &ParamMatrix, x: &[f64]) -> Result<()> {
    if x.len() != w.dim() {
        return Err(Error::DimensionMismatch {
            expected: w.dim(),
            found: x.len(),
        });
    }
    Ok(())
}

/// `P(y = c | x, w)` for every class.
pub fn instance_posterior(w: &ParamMatrix, x: &[f64]) -> Result<Vec<f64>> {
    check_dim(w, x)?;
    let mut scores = vec![0.0; w.classes()];
    class_scores_into(w, x, &mut scores);
    let lse = log_sum_exp(&scores);
    Ok(scores.iter().map(|s| (s - lse).exp()).collect())
}

/// `log P(y ≠ t | x, w)`, computed as `log Σ_{k≠t} e^{s_k} − log Σ_k e^{s_k}`.
pub fn log_prob_not_class(w: &ParamMatrix, x: &[f64], t: usize) -> Result<f64> {
    check_dim(w, x)?;
    if t >= w.classes() {
        return Err(Error::IndexOutOfRange { bag: 0, class: t });
    }
    let mut scores = vec![0.0; w.classes()];
    class_scores_into(w, x, &mut scores);
    Ok(log_sum_exp_except(&scores, t) - log_sum_exp(&scores))
}

/// Per-instance log posteriors and log "not class" probabilities of one bag,
/// shared by every class-level quantity of that bag.
#[derive(Debug, Clone)]
pub struct BagEval {
    classes: usize,
    /// `log P(y_i = c)`, row-major `n_b × C`.
    log_post: Vec<f64>,
    /// `log P(y_i ≠ c)`, row-major `n_b × C`.
    log_not: Vec<f64>,
}

impl BagEval {
    pub fn new(w: &ParamMatrix, bag: &Bag) -> Self {
        debug_assert_eq!(w.dim(), bag.dim());
        let classes = w.classes();
        let n = bag.len();
        let mut log_post = vec![0.0; n * classes];
        let mut log_not = vec![0.0; n * classes];
        let mut scores = vec![0.0; classes];
        for (i, x) in bag.instances().enumerate() {
            class_scores_into(w, x, &mut scores);
            let lse = log_sum_exp(&scores);
            for c in 0..classes {
                log_post[i * classes + c] = scores[c] - lse;
                log_not[i * classes + c] = log_sum_exp_except(&scores, c) - lse;
            }
        }
        BagEval {
            classes,
            log_post,
            log_not,
        }
    }

    pub fn len(&self) -> usize {
        self.log_post.len() / self.classes
    }

    pub fn is_empty(&self) -> bool {
        self.log_post.is_empty()
    }

    pub fn log_post(&self, i: usize, c: usize) -> f64 {
        self.log_post[i * self.classes + c]
    }

    pub fn log_not(&self, i: usize, c: usize) -> f64 {
        self.log_not[i * self.classes + c]
    }

    /// Unclamped `A_bt`.
    pub fn raw_log_neg(&self, t: usize) -> f64 {
        (0..self.len()).map(|i| self.log_not(i, t)).sum()
    }

    pub fn log_neg(&self, t: usize) -> BagClassLogProb {
        BagClassLogProb::from_raw(self.raw_log_neg(t))
    }
}

/// `A_bt = Σ_i log P(y_bi ≠ t)` after clamping, in nats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BagClassLogProb {
    value: f64,
    clamped: bool,
}

impl BagClassLogProb {
    pub fn from_raw(raw: f64) -> Self {
        let lo = log_floor();
        let hi = log_ceiling();
        if raw < lo {
            BagClassLogProb {
                value: lo,
                clamped: true,
            }
        } else if raw > hi {
            BagClassLogProb {
                value: hi,
                clamped: true,
            }
        } else {
            BagClassLogProb {
                value: raw,
                clamped: false,
            }
        }
    }

    pub fn value(self) -> f64 {
        self.value
    }

    /// True when the floor or ceiling was active; the clamped quantity is
    /// locally constant in `w`.
    pub fn is_clamped(self) -> bool {
        self.clamped
    }

    /// `P(Y_bt = 0)`.
    pub fn prob_negative(self) -> f64 {
        self.value.exp()
    }

    /// `P(Y_bt = 1) = 1 − e^A`, via `expm1`.
    pub fn prob_positive(self) -> f64 {
        -self.value.exp_m1()
    }

    /// `log P(Y_bt = label)`.
    pub fn log_prob(self, label: bool) -> f64 {
        if label {
            (-self.value.exp_m1()).ln()
        } else {
            self.value
        }
    }
}

pub fn bag_class_logprob(w: &ParamMatrix, bag: &Bag, t: usize) -> BagClassLogProb {
    let mut scores = vec![0.0; w.classes()];
    let raw = bag
        .instances()
        .map(|x| {
            class_scores_into(w, x, &mut scores);
            log_sum_exp_except(&scores, t) - log_sum_exp(&scores)
        })
        .sum();
    BagClassLogProb::from_raw(raw)
}

pub fn bag_class_prob_positive(w: &ParamMatrix, bag: &Bag, t: usize) -> f64 {
    bag_class_logprob(w, bag, t).prob_positive()
}

/// `P(Y_bc = 1)` for every class of a bag.
pub fn bag_probabilities(w: &ParamMatrix, bag: &Bag) -> Vec<f64> {
    let eval = BagEval::new(w, bag);
    (0..w.classes())
        .map(|c| eval.log_neg(c).prob_positive())
        .collect()
}

/// Thresholded bag labels plus the probabilities used to rank classes.
#[derive(Debug, Clone, PartialEq)]
pub struct BagPrediction {
    pub labels: Vec<bool>,
    pub scores: Vec<f64>,
}

impl BagPrediction {
    pub fn from_scores(scores: Vec<f64>, threshold: f64) -> Self {
        BagPrediction {
            labels: scores.iter().map(|&p| p > threshold).collect(),
            scores,
        }
    }

    pub fn positive_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }
}

pub fn predict_bag(w: &ParamMatrix, bag: &Bag, threshold: f64) -> Result<BagPrediction> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!(
            "threshold must lie in (0, 1), got {threshold}"
        )));
    }
    Ok(BagPrediction::from_scores(
        bag_probabilities(w, bag),
        threshold,
    ))
}
