//! Query strategies.
//!
//! Pair criteria score every unlabeled `(b, c)`:
//!
//! - EGL: `[P(Y=1)·‖∇log P(Y=1)‖ + P(Y=0)·‖∇log P(Y=0)‖] / (|L| + 1)`, the
//!   expected norm of the training gradient once the pair joins `L`,
//!   assuming the current model is stationary on `L`.
//! - Uncertainty: `2p(1 − p)` with `p = P(Y_bc = 1)`.
//!
//! Baselines: uniform random pairs, bag-then-label, and whole-bag queries
//! priced at `C/k` pair units. Ties go to the lexicographically smallest
//! `(bag, class)`.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::dataset::{Dataset, Pair};
use crate::error::{Error, Result};
use crate::model::{BagEval, ParamMatrix};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    EglPair,
    UncPair,
    RandPair,
    BagThenLabel,
    BagAll,
}

impl Criterion {
    pub const ALL: [Criterion; 5] = [
        Criterion::EglPair,
        Criterion::UncPair,
        Criterion::RandPair,
        Criterion::BagThenLabel,
        Criterion::BagAll,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Criterion::EglPair => "egl-pair",
            Criterion::UncPair => "unc-pair",
            Criterion::RandPair => "rand-pair",
            Criterion::BagThenLabel => "bag-then-label",
            Criterion::BagAll => "bag-all",
        }
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Criterion::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown criterion `{s}` (expected egl-pair, unc-pair, rand-pair, bag-then-label or bag-all)"
                ))
            })
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairScore {
    pub bag: usize,
    pub class: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    Pair { bag: usize, class: usize },
    Bag { bag: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionResult {
    pub selection: Selection,
    pub score: f64,
    /// Labeling cost in bag-class pair units.
    pub cost_units: f64,
}

impl SelectionResult {
    fn pair(bag: usize, class: usize, score: f64) -> Self {
        SelectionResult {
            selection: Selection::Pair { bag, class },
            score,
            cost_units: 1.0,
        }
    }

    pub fn bag(&self) -> usize {
        match self.selection {
            Selection::Pair { bag, .. } | Selection::Bag { bag } => bag,
        }
    }
}

/// `2p(1 − p)`.
pub fn uncertainty_score(p: f64) -> f64 {
    2.0 * p * (1.0 - p)
}

/// EGL numerator from an already evaluated bag; `grad` is scratch space.
fn egl_raw_from_eval(
    eval: &BagEval,
    bag: &crate::dataset::Bag,
    c: usize,
    grad: &mut ParamMatrix,
) -> f64 {
    let a = eval.log_neg(c);
    if a.is_clamped() {
        return 0.0;
    }
    grad.fill(0.0);
    crate::objective::add_log_marginal_gradient(eval, bag, c, false, 1.0, grad);
    // ∇log P(Y=0) = ∇A and ∇log P(Y=1) = −(P0/P1)·∇A
    let norm_neg = grad.norm();
    let p0 = a.prob_negative();
    let p1 = a.prob_positive();
    let norm_pos = p0 / p1 * norm_neg;
    p1 * norm_pos + p0 * norm_neg
}

/// EGL score without the `1/(|L|+1)` factor.
pub fn egl_pair_score_raw(w: &ParamMatrix, bag: &crate::dataset::Bag, c: usize) -> f64 {
    let eval = BagEval::new(w, bag);
    let mut grad = ParamMatrix::zeros(w.classes(), w.dim());
    egl_raw_from_eval(&eval, bag, c, &mut grad)
}

pub fn egl_pair_score(
    w: &ParamMatrix,
    bag: &crate::dataset::Bag,
    c: usize,
    num_labeled: usize,
) -> f64 {
    egl_pair_score_raw(w, bag, c) / (num_labeled + 1) as f64
}

pub fn uncertainty_pair_score(w: &ParamMatrix, bag: &crate::dataset::Bag, c: usize) -> f64 {
    uncertainty_score(crate::model::bag_class_prob_positive(w, bag, c))
}

fn scores_for_bag(
    ds: &Dataset,
    w: &ParamMatrix,
    b: usize,
    criterion: Criterion,
    divisor: f64,
) -> Vec<PairScore> {
    let unlabeled = ds.label_vector(b).unlabeled();
    if unlabeled.is_empty() {
        return Vec::new();
    }
    let bag = ds.bag(b);
    let eval = BagEval::new(w, bag);
    let mut grad = ParamMatrix::zeros(w.classes(), w.dim());
    unlabeled
        .into_iter()
        .map(|c| {
            let score = match criterion {
                Criterion::EglPair => egl_raw_from_eval(&eval, bag, c, &mut grad) / divisor,
                _ => uncertainty_score(eval.log_neg(c).prob_positive()),
            };
            PairScore {
                bag: b,
                class: c,
                score,
            }
        })
        .collect()
}

fn score_pairs(
    ds: &Dataset,
    w: &ParamMatrix,
    criterion: Criterion,
    divisor: f64,
) -> Vec<PairScore> {
    let bags = 0..ds.num_bags();
    #[cfg(feature = "parallel")]
    let nested: Vec<Vec<PairScore>> = bags
        .into_par_iter()
        .map(|b| scores_for_bag(ds, w, b, criterion, divisor))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let nested: Vec<Vec<PairScore>> = bags
        .map(|b| scores_for_bag(ds, w, b, criterion, divisor))
        .collect();
    nested.into_iter().flatten().collect()
}

/// Scores of every pair in `U`, in lexicographic order, for `egl-pair` or
/// `unc-pair`.
pub fn score_unlabeled_pairs(
    ds: &Dataset,
    w: &ParamMatrix,
    criterion: Criterion,
) -> Result<Vec<PairScore>> {
    match criterion {
        Criterion::EglPair => Ok(score_pairs(
            ds,
            w,
            criterion,
            (ds.num_available() + 1) as f64,
        )),
        Criterion::UncPair => Ok(score_pairs(ds, w, criterion, 1.0)),
        other => Err(Error::Config(format!(
            "`{other}` does not score individual pairs"
        ))),
    }
}

/// EGL scores without the common `1/(|L|+1)` factor.
pub fn egl_scores_undivided(ds: &Dataset, w: &ParamMatrix) -> Vec<PairScore> {
    score_pairs(ds, w, Criterion::EglPair, 1.0)
}

/// First maximum in iteration order, so lexicographic input order resolves
/// ties toward the smallest pair.
pub fn argmax_first(scores: &[PairScore]) -> Option<PairScore> {
    let mut best: Option<PairScore> = None;
    for s in scores {
        if best.is_none_or(|b| s.score > b.score) {
            best = Some(*s);
        }
    }
    best
}

/// Picks one pair from `U` under a pair criterion.
pub fn select_pair(
    ds: &Dataset,
    w: &ParamMatrix,
    criterion: Criterion,
    rng: &mut Rng,
) -> Result<SelectionResult> {
    match criterion {
        Criterion::RandPair => {
            let pool: Vec<Pair> = ds.unavailable_pairs();
            if pool.is_empty() {
                return Err(Error::EmptyPool);
            }
            let (b, c) = pool[rng.random_range(0..pool.len())];
            Ok(SelectionResult::pair(b, c, 0.0))
        }
        Criterion::EglPair | Criterion::UncPair => {
            let scores = score_unlabeled_pairs(ds, w, criterion)?;
            let best = argmax_first(&scores).ok_or(Error::EmptyPool)?;
            Ok(SelectionResult::pair(best.bag, best.class, best.score))
        }
        other => Err(Error::Config(format!("`{other}` is not a pair criterion"))),
    }
}

/// Mean number of positive labels over fully labeled bags, or `C/2` when no
/// bag is fully labeled.
pub fn average_cardinality(ds: &Dataset) -> f64 {
    let complete: Vec<usize> = ds
        .labels()
        .iter()
        .filter(|lv| lv.is_complete())
        .map(|lv| lv.positive().len())
        .collect();
    if complete.is_empty() {
        ds.num_classes() as f64 / 2.0
    } else {
        complete.iter().sum::<usize>() as f64 / complete.len() as f64
    }
}

/// Bag-then-label baseline: the bag maximizing
/// `|predicted positives − avg_cardinality| × unlabeled fraction`, then its
/// unlabeled class with `P(Y_bc = 1)` closest to 0.5.
pub fn select_bag_then_label(
    ds: &Dataset,
    w: &ParamMatrix,
    avg_cardinality: f64,
    threshold: f64,
) -> Result<SelectionResult> {
    let classes = ds.num_classes() as f64;
    let mut best: Option<(usize, f64, Vec<f64>)> = None;
    for b in 0..ds.num_bags() {
        let lv = ds.label_vector(b);
        let unlabeled = lv.unlabeled().len();
        if unlabeled == 0 {
            continue;
        }
        let probs = crate::model::bag_probabilities(w, ds.bag(b));
        let predicted = probs.iter().filter(|&&p| p > threshold).count() as f64;
        let score = (predicted - avg_cardinality).abs() * (unlabeled as f64 / classes);
        if best.as_ref().is_none_or(|(_, s, _)| score > *s) {
            best = Some((b, score, probs));
        }
    }
    let (b, score, probs) = best.ok_or(Error::EmptyPool)?;
    let class = closest_to_half(&probs, &ds.label_vector(b).unlabeled())
        .expect("bag has an unlabeled class");
    Ok(SelectionResult::pair(b, class, score))
}

/// The candidate class whose probability is nearest 0.5; ties keep the
/// earlier candidate.
fn closest_to_half(probs: &[f64], candidates: &[usize]) -> Option<usize> {
    candidates.iter().copied().fold(None, |acc, c| match acc {
        Some(a) if (probs[a] - 0.5).abs() <= (probs[c] - 0.5).abs() => Some(a),
        _ => Some(c),
    })
}

/// Whole-bag baseline: the bag with the highest mean uncertainty over its
/// unlabeled classes, priced at `C / k`.
pub fn select_bag_all(ds: &Dataset, w: &ParamMatrix, k: f64) -> Result<SelectionResult> {
    if !(k >= 1.0) {
        return Err(Error::Config(format!(
            "cost divisor k must be >= 1, got {k}"
        )));
    }
    let mut best: Option<(usize, f64)> = None;
    for b in 0..ds.num_bags() {
        let unlabeled = ds.label_vector(b).unlabeled();
        if unlabeled.is_empty() {
            continue;
        }
        let eval = BagEval::new(w, ds.bag(b));
        let score = unlabeled
            .iter()
            .map(|&c| uncertainty_score(eval.log_neg(c).prob_positive()))
            .sum::<f64>()
            / unlabeled.len() as f64;
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((b, score));
        }
    }
    let (bag, score) = best.ok_or(Error::EmptyPool)?;
    Ok(SelectionResult {
        selection: Selection::Bag { bag },
        score,
        cost_units: ds.num_classes() as f64 / k,
    })
}

/// Dispatches to the strategy named by `criterion`.
pub fn select(
    ds: &Dataset,
    w: &ParamMatrix,
    criterion: Criterion,
    k: f64,
    threshold: f64,
    rng: &mut Rng,
) -> Result<SelectionResult> {
    match criterion {
        Criterion::EglPair | Criterion::UncPair | Criterion::RandPair => {
            select_pair(ds, w, criterion, rng)
        }
        Criterion::BagThenLabel => select_bag_then_label(ds, w, average_cardinality(ds), threshold),
        Criterion::BagAll => select_bag_all(ds, w, k),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Bag, LabelVector, TriLabel};
    use crate::objective::logprob_gradient_for_label;
    use crate::rng::rng_from_seed;

    fn bag(id: &str, rows: Vec<Vec<f64>>) -> Bag {
        Bag::new(id, rows).unwrap()
    }

    fn labels(rows: &[&[i64]]) -> Vec<LabelVector> {
        rows.iter()
            .map(|r| LabelVector::new(r.iter().map(|&v| TriLabel::from_code(v).unwrap()).collect()))
            .collect()
    }

    #[test]
    fn criterion_names_round_trip() {
        for c in Criterion::ALL {
            assert_eq!(c.name().parse::<Criterion>().unwrap(), c);
        }
        assert!("egl".parse::<Criterion>().is_err());
    }

    #[test]
    fn uncertainty_values() {
        assert_eq!(uncertainty_score(0.5), 0.5);
        assert!((uncertainty_score(0.9) - 0.18).abs() < 1e-15);
        assert!(uncertainty_score(1e-12) < 1e-11);
        assert!(uncertainty_score(1.0 - 1e-12) < 1e-11);
    }

    #[test]
    fn egl_matches_composed_gradients() {
        let w =
            ParamMatrix::from_rows(vec![vec![0.3, -0.8], vec![1.1, 0.2], vec![-0.4, 0.9]]).unwrap();
        let b = bag("b", vec![vec![0.5, 1.0], vec![-1.2, 0.3], vec![0.0, -0.7]]);
        for c in 0..3 {
            let p1 = crate::model::bag_class_prob_positive(&w, &b, c);
            let g1 = logprob_gradient_for_label(&w, &b, c, true).norm();
            let g0 = logprob_gradient_for_label(&w, &b, c, false).norm();
            let expected = (p1 * g1 + (1.0 - p1) * g0) / 8.0;
            assert!((egl_pair_score(&w, &b, c, 7) - expected).abs() < 1e-12);
        }
        assert_eq!(egl_pair_score(&w, &b, 0, 0), egl_pair_score_raw(&w, &b, 0));
    }

    #[test]
    fn egl_zero_when_saturated() {
        let w = ParamMatrix::from_rows(vec![vec![50.0], vec![-50.0]]).unwrap();
        let b = bag("b", vec![vec![1.0]]);
        assert_eq!(egl_pair_score(&w, &b, 0, 3), 0.0);
    }

    #[test]
    fn single_candidate_and_ties() {
        let w = ParamMatrix::zeros(2, 1);
        let bags = vec![bag("a", vec![vec![1.0]]), bag("b", vec![vec![1.0]])];
        let ds = Dataset::new(bags.clone(), labels(&[&[0, 1], &[-1, 0]])).unwrap();
        let mut rng = rng_from_seed(0);
        for crit in [Criterion::EglPair, Criterion::UncPair, Criterion::RandPair] {
            let r = select_pair(&ds, &w, crit, &mut rng).unwrap();
            assert_eq!(r.selection, Selection::Pair { bag: 1, class: 0 });
            assert_eq!(r.cost_units, 1.0);
        }
        // identical bags, all unknown: every score ties
        let ds = Dataset::new(bags, labels(&[&[-1, -1], &[-1, -1]])).unwrap();
        for crit in [Criterion::EglPair, Criterion::UncPair] {
            let r = select_pair(&ds, &w, crit, &mut rng).unwrap();
            assert_eq!(r.selection, Selection::Pair { bag: 0, class: 0 });
        }
        let full = Dataset::new(vec![bag("a", vec![vec![1.0]])], labels(&[&[0, 1]])).unwrap();
        assert!(matches!(
            select_pair(&full, &w, Criterion::UncPair, &mut rng),
            Err(Error::EmptyPool)
        ));
        assert!(matches!(
            select_pair(&full, &w, Criterion::RandPair, &mut rng),
            Err(Error::EmptyPool)
        ));
    }

    #[test]
    fn random_selection_is_reproducible() {
        let w = ParamMatrix::zeros(3, 1);
        let bags: Vec<Bag> = (0..6)
            .map(|i| bag(&format!("b{i}"), vec![vec![i as f64]]))
            .collect();
        let ds = Dataset::new(bags, vec![LabelVector::unknown(3); 6]).unwrap();
        let draw = |seed| {
            let mut rng = rng_from_seed(seed);
            (0..10)
                .map(|_| {
                    select_pair(&ds, &w, Criterion::RandPair, &mut rng)
                        .unwrap()
                        .selection
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
    }

    #[test]
    fn bag_then_label_rules() {
        // one candidate bag; weights chosen so P(Y_c = 1) differ per class
        let w = ParamMatrix::from_rows(vec![vec![-2.0], vec![0.0], vec![3.0]]).unwrap();
        let bags = vec![bag("full", vec![vec![1.0]]), bag("cand", vec![vec![1.0]])];
        let ds = Dataset::new(bags, labels(&[&[1, 0, 0], &[-1, -1, -1]])).unwrap();
        let probs = crate::model::bag_probabilities(&w, ds.bag(1));
        let r = select_bag_then_label(&ds, &w, average_cardinality(&ds), 0.5).unwrap();
        assert_eq!(r.bag(), 1);
        let expect = (0..3)
            .min_by(|&a, &b| (probs[a] - 0.5).abs().total_cmp(&(probs[b] - 0.5).abs()))
            .unwrap();
        assert_eq!(
            r.selection,
            Selection::Pair {
                bag: 1,
                class: expect
            }
        );
        assert_eq!(average_cardinality(&ds), 1.0);

        let none_full =
            Dataset::new(vec![bag("x", vec![vec![1.0]])], labels(&[&[-1, 1, -1, -1]])).unwrap();
        assert_eq!(average_cardinality(&none_full), 2.0);
    }

    #[test]
    fn class_choice_closest_to_half() {
        let probs = [0.1, 0.45, 0.95, 0.25, 0.75];
        assert_eq!(closest_to_half(&probs, &[0, 1, 2, 3, 4]), Some(1));
        assert_eq!(closest_to_half(&probs, &[3, 4]), Some(3));
        assert_eq!(closest_to_half(&probs, &[4, 3]), Some(4));
        assert_eq!(closest_to_half(&probs, &[0, 2]), Some(0));
        assert_eq!(closest_to_half(&probs, &[]), None);
    }

    #[test]
    fn bag_all_cost_and_ties() {
        let w = ParamMatrix::zeros(5, 1);
        let bags: Vec<Bag> = (0..3)
            .map(|i| bag(&format!("b{i}"), vec![vec![i as f64]]))
            .collect();
        let ds = Dataset::new(
            bags,
            labels(&[
                &[0, 1, 0, 0, 0],
                &[-1, -1, -1, -1, -1],
                &[-1, -1, -1, -1, -1],
            ]),
        )
        .unwrap();
        let r = select_bag_all(&ds, &w, 1.0).unwrap();
        assert_eq!(r.selection, Selection::Bag { bag: 1 });
        assert_eq!(r.cost_units, 5.0);
        assert_eq!(select_bag_all(&ds, &w, 2.5).unwrap().cost_units, 2.0);
        assert!(select_bag_all(&ds, &w, 0.5).is_err());
    }

    #[test]
    fn scoring_is_read_only() {
        let w = ParamMatrix::from_rows(vec![vec![0.3], vec![-0.2]]).unwrap();
        let ds = Dataset::new(
            vec![bag("a", vec![vec![1.0], vec![2.0]])],
            labels(&[&[-1, 1]]),
        )
        .unwrap();
        let (w0, ds0) = (w.clone(), ds.clone());
        let mut rng = rng_from_seed(1);
        for crit in Criterion::ALL {
            select(&ds, &w, crit, 1.0, 0.5, &mut rng).unwrap();
        }
        assert_eq!((w, ds), (w0, ds0));
    }
}
