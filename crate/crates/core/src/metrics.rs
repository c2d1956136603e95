//! Bag-level multi-label evaluation.
//!
//! - Hamming loss: fraction of wrong bag-class predictions.
//! - Bag accuracy: mean Jaccard overlap of predicted and true positive sets
//!   (1 when both are empty). Subset accuracy is reported alongside.
//! - One-error: fraction of bags whose top-ranked class is not positive.
//! - Average precision: label-ranking average precision of the true
//!   positives under the probability ranking.
//!
//! Rankings sort by probability, ties by class index. Bags without a true
//! positive are left out of one-error and average precision.

use std::fmt::Write as _;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{bag_probabilities, ParamMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub cost: f64,
    pub bag_accuracy: f64,
    pub hamming_loss: f64,
    pub avg_precision: f64,
    pub one_error: f64,
    pub subset_accuracy: f64,
}

impl MetricsRow {
    pub const NAMES: [&'static str; 5] = [
        "bag_accuracy",
        "hamming_loss",
        "avg_precision",
        "one_error",
        "subset_accuracy",
    ];

    pub fn values(&self) -> [f64; 5] {
        [
            self.bag_accuracy,
            self.hamming_loss,
            self.avg_precision,
            self.one_error,
            self.subset_accuracy,
        ]
    }
}

/// Class indices sorted by decreasing score, ties by index.
fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

fn average_precision(order: &[usize], truth: &[bool]) -> f64 {
    let positives = truth.iter().filter(|&&t| t).count();
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &c) in order.iter().enumerate() {
        if truth[c] {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    total / positives as f64
}

/// Metrics from per-bag class probabilities and true labels.
pub fn evaluate_scores(
    scores: &[Vec<f64>],
    truth: &[Vec<bool>],
    threshold: f64,
) -> Result<MetricsRow> {
    if scores.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty test set".into()));
    }
    if scores.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            found: scores.len(),
        });
    }
    let mut wrong = 0usize;
    let mut cells = 0usize;
    let mut jaccard = 0.0;
    let mut exact = 0usize;
    let mut ranked_bags = 0usize;
    let mut one_err = 0usize;
    let mut ap = 0.0;
    for (s, y) in scores.iter().zip(truth) {
        if s.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: y.len(),
                found: s.len(),
            });
        }
        let pred: Vec<bool> = s.iter().map(|&p| p > threshold).collect();
        let mut inter = 0usize;
        let mut union = 0usize;
        let mut mismatches = 0usize;
        for (&p, &t) in pred.iter().zip(y) {
            inter += usize::from(p && t);
            union += usize::from(p || t);
            mismatches += usize::from(p != t);
        }
        wrong += mismatches;
        cells += y.len();
        exact += usize::from(mismatches == 0);
        jaccard += if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        };
        if y.iter().any(|&t| t) {
            ranked_bags += 1;
            let order = ranking(s);
            one_err += usize::from(!y[order[0]]);
            ap += average_precision(&order, y);
        }
    }
    let bags = scores.len() as f64;
    let (one_error, avg_precision) = if ranked_bags == 0 {
        (0.0, 1.0)
    } else {
        (one_err as f64 / ranked_bags as f64, ap / ranked_bags as f64)
    };
    Ok(MetricsRow {
        cost: 0.0,
        bag_accuracy: jaccard / bags,
        hamming_loss: wrong as f64 / cells as f64,
        avg_precision,
        one_error,
        subset_accuracy: exact as f64 / bags,
    })
}

/// Evaluates `w` on a fully labeled test set. `cost` is left at zero.
pub fn evaluate(w: &ParamMatrix, test: &Dataset, threshold: f64) -> Result<MetricsRow> {
    let truth = test
        .labels()
        .iter()
        .map(|lv| {
            lv.entries()
                .iter()
                .map(|l| l.value())
                .collect::<Option<Vec<bool>>>()
        })
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::Config("test set contains unknown labels".into()))?;
    let scores: Vec<Vec<f64>> = test
        .bags()
        .iter()
        .map(|b| bag_probabilities(w, b))
        .collect();
    evaluate_scores(&scores, &truth, threshold)
}

/// Header and rows of a learning-curve CSV.
pub fn curves_csv(rows: &[MetricsRow], with_subset_accuracy: bool) -> String {
    let mut out = String::from("cost,bag_accuracy,hamming_loss,avg_precision,one_error");
    if with_subset_accuracy {
        out.push_str(",subset_accuracy");
    }
    out.push('\n');
    for r in rows {
        write!(
            out,
            "{},{:e},{:e},{:e},{:e}",
            r.cost, r.bag_accuracy, r.hamming_loss, r.avg_precision, r.one_error
        )
        .unwrap();
        if with_subset_accuracy {
            write!(out, ",{:e}", r.subset_accuracy).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Pointwise mean and sample standard deviation across runs.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub cost: f64,
    pub runs: usize,
    pub mean: [f64; 5],
    pub std: [f64; 5],
}

/// Aligns runs on the union of their cost points, carrying each run's last
/// observation forward, then averages. A run contributes to a cost point
/// only once it has a row at or before it.
pub fn aggregate_runs(runs: &[Vec<MetricsRow>]) -> Result<Vec<AggregateRow>> {
    if runs.is_empty() {
        return Err(Error::Config("no runs to aggregate".into()));
    }
    let mut grid: Vec<f64> = runs.iter().flatten().map(|r| r.cost).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let mut cursors = vec![0usize; runs.len()];
    let mut out = Vec::with_capacity(grid.len());
    for &cost in &grid {
        let mut samples: Vec<[f64; 5]> = Vec::with_capacity(runs.len());
        for (run, cur) in runs.iter().zip(cursors.iter_mut()) {
            while *cur + 1 < run.len() && run[*cur + 1].cost <= cost {
                *cur += 1;
            }
            if let Some(row) = run.get(*cur).filter(|r| r.cost <= cost) {
                samples.push(row.values());
            }
        }
        let n = samples.len();
        let mut mean = [0.0; 5];
        let mut std = [0.0; 5];
        for k in 0..5 {
            mean[k] = samples.iter().map(|s| s[k]).sum::<f64>() / n as f64;
            if n > 1 {
                let ss: f64 = samples.iter().map(|s| (s[k] - mean[k]).powi(2)).sum();
                std[k] = (ss / (n - 1) as f64).sqrt();
            }
        }
        out.push(AggregateRow {
            cost,
            runs: n,
            mean,
            std,
        });
    }
    Ok(out)
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from("cost,runs");
    for name in MetricsRow::NAMES {
        write!(out, ",{name}_mean,{name}_std").unwrap();
    }
    out.push('\n');
    for r in rows {
        write!(out, "{},{}", r.cost, r.runs).unwrap();
        for k in 0..5 {
            write!(out, ",{:e},{:e}", r.mean[k], r.std[k]).unwrap();
        }
        out.push('\n');
    }
    out
}
