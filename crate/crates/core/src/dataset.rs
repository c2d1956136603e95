//! MIML data with tri-state bag labels.
//!
//! Classes are 0-based inside the crate. Files, CSV outputs and the CLI use
//! 1-based class numbers.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{instance_posterior, ParamMatrix};
use crate::rng::rng_from_seed;

/// Observed state of one bag-class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TriLabel {
    Negative,
    Positive,
    Unknown,
}

impl TriLabel {
    pub fn from_code(code: i64) -> Option<Self> {
        match code {
            0 => Some(TriLabel::Negative),
            1 => Some(TriLabel::Positive),
            -1 => Some(TriLabel::Unknown),
            _ => None,
        }
    }

    pub fn code(self) -> i8 {
        match self {
            TriLabel::Negative => 0,
            TriLabel::Positive => 1,
            TriLabel::Unknown => -1,
        }
    }

    pub fn known(value: bool) -> Self {
        if value {
            TriLabel::Positive
        } else {
            TriLabel::Negative
        }
    }

    pub fn value(self) -> Option<bool> {
        match self {
            TriLabel::Negative => Some(false),
            TriLabel::Positive => Some(true),
            TriLabel::Unknown => None,
        }
    }

    pub fn is_known(self) -> bool {
        self != TriLabel::Unknown
    }
}

/// A bag of instances sharing dimension `d`, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    id: String,
    dim: usize,
    data: Vec<f64>,
}

impl Bag {
    pub fn new(id: impl Into<String>, instances: Vec<Vec<f64>>) -> Result<Self> {
        let id = id.into();
        let dim = instances.first().map_or(0, Vec::len);
        if instances.is_empty() || dim == 0 {
            return Err(Error::EmptyBag(id));
        }
        let mut data = Vec::with_capacity(instances.len() * dim);
        for x in instances {
            if x.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: x.len(),
                });
            }
            data.extend(x);
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("instance features"));
        }
        Ok(Bag { id, dim, data })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of instances `n_b`.
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn instance(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn instances(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    fn map_features(&mut self, f: impl Fn(usize, f64) -> f64) {
        let dim = self.dim;
        for (k, v) in self.data.iter_mut().enumerate() {
            *v = f(k % dim, *v);
        }
    }
}

/// Label vector of one bag with its derived class sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector(Vec<TriLabel>);

impl LabelVector {
    pub fn new(entries: Vec<TriLabel>) -> Self {
        LabelVector(entries)
    }

    pub fn unknown(classes: usize) -> Self {
        LabelVector(vec![TriLabel::Unknown; classes])
    }

    pub fn from_bools(values: &[bool]) -> Self {
        LabelVector(values.iter().map(|&v| TriLabel::known(v)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, c: usize) -> TriLabel {
        self.0[c]
    }

    pub fn entries(&self) -> &[TriLabel] {
        &self.0
    }

    fn classes_where(&self, pred: impl Fn(TriLabel) -> bool) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &l)| pred(l))
            .map(|(c, _)| c)
            .collect()
    }

    /// `S_b`: classes with an observed label.
    pub fn available(&self) -> Vec<usize> {
        self.classes_where(TriLabel::is_known)
    }

    /// `S_b⁺`.
    pub fn positive(&self) -> Vec<usize> {
        self.classes_where(|l| l == TriLabel::Positive)
    }

    /// `S_b⁻`.
    pub fn negative(&self) -> Vec<usize> {
        self.classes_where(|l| l == TriLabel::Negative)
    }

    /// `S̄_b`: unlabeled classes.
    pub fn unlabeled(&self) -> Vec<usize> {
        self.classes_where(|l| l == TriLabel::Unknown)
    }

    pub fn num_available(&self) -> usize {
        self.0.iter().filter(|l| l.is_known()).count()
    }

    pub fn is_complete(&self) -> bool {
        self.0.iter().all(|l| l.is_known())
    }

    /// Observed `(class, value)` pairs.
    pub fn observed(&self) -> impl Iterator<Item = (usize, bool)> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter_map(|(c, l)| l.value().map(|v| (c, v)))
    }
}

/// A bag-class coordinate `(b, c)`, both 0-based.
pub type Pair = (usize, usize);

/// Bags plus their (partially observed) labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    bags: Vec<Bag>,
    labels: Vec<LabelVector>,
    num_classes: usize,
    feature_dim: usize,
}

impl Dataset {
    pub fn new(bags: Vec<Bag>, labels: Vec<LabelVector>) -> Result<Self> {
        if bags.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: bags.len(),
                found: labels.len(),
            });
        }
        let Some(first) = bags.first() else {
            return Err(Error::Config("dataset has no bags".into()));
        };
        let feature_dim = first.dim();
        let num_classes = labels[0].len();
        if num_classes < 2 {
            return Err(Error::Config(format!(
                "at least two classes are required, found {num_classes}"
            )));
        }
        for (bag, label) in bags.iter().zip(&labels) {
            if bag.is_empty() {
                return Err(Error::EmptyBag(bag.id().to_string()));
            }
            if bag.dim() != feature_dim {
                return Err(Error::DimensionMismatch {
                    expected: feature_dim,
                    found: bag.dim(),
                });
            }
            if label.len() != num_classes {
                return Err(Error::DimensionMismatch {
                    expected: num_classes,
                    found: label.len(),
                });
            }
        }
        Ok(Dataset {
            bags,
            labels,
            num_classes,
            feature_dim,
        })
    }

    pub fn bags(&self) -> &[Bag] {
        &self.bags
    }

    pub fn bag(&self, b: usize) -> &Bag {
        &self.bags[b]
    }

    pub fn labels(&self) -> &[LabelVector] {
        &self.labels
    }

    pub fn label_vector(&self, b: usize) -> &LabelVector {
        &self.labels[b]
    }

    pub fn label(&self, b: usize, c: usize) -> TriLabel {
        self.labels[b].get(c)
    }

    pub fn num_bags(&self) -> usize {
        self.bags.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn max_bag_size(&self) -> usize {
        self.bags.iter().map(Bag::len).max().unwrap_or(0)
    }

    /// `|L| = Σ_b |S_b|`.
    pub fn num_available(&self) -> usize {
        self.labels.iter().map(LabelVector::num_available).sum()
    }

    pub fn num_unavailable(&self) -> usize {
        self.num_bags() * self.num_classes - self.num_available()
    }

    /// `L` and `U`, each in lexicographic `(bag, class)` order.
    pub fn index_sets(&self) -> (Vec<Pair>, Vec<Pair>) {
        let mut available = Vec::new();
        let mut unavailable = Vec::new();
        for (b, lv) in self.labels.iter().enumerate() {
            for (c, l) in lv.entries().iter().enumerate() {
                if l.is_known() {
                    available.push((b, c));
                } else {
                    unavailable.push((b, c));
                }
            }
        }
        (available, unavailable)
    }

    pub fn unavailable_pairs(&self) -> Vec<Pair> {
        self.index_sets().1
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.labels.iter().all(LabelVector::is_complete)
    }

    /// Sets `Y_bc = value` for a currently unknown pair, moving it from `U`
    /// to `L`.
    pub fn reveal_label(&mut self, b: usize, c: usize, value: bool) -> Result<()> {
        if b >= self.num_bags() || c >= self.num_classes {
            return Err(Error::IndexOutOfRange { bag: b, class: c });
        }
        let slot = &mut self.labels[b].0[c];
        if slot.is_known() {
            return Err(Error::AlreadyLabeled { bag: b, class: c });
        }
        *slot = TriLabel::known(value);
        Ok(())
    }

    /// Restriction to the given bag indices, in the order given.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        Dataset::new(
            indices.iter().map(|&i| self.bags[i].clone()).collect(),
            indices.iter().map(|&i| self.labels[i].clone()).collect(),
        )
    }

    pub fn with_labels(&self, labels: Vec<LabelVector>) -> Result<Dataset> {
        Dataset::new(self.bags.clone(), labels)
    }

    pub fn labels_to_text(&self) -> String {
        labels_text(
            self.bags.iter().map(Bag::id),
            self.labels
                .iter()
                .map(|lv| lv.entries().iter().map(|l| l.code())),
        )
    }

    pub fn features_to_text(&self) -> String {
        let mut out = String::new();
        for bag in &self.bags {
            for x in bag.instances() {
                out.push_str(bag.id());
                for v in x {
                    write!(out, ",{v:e}").unwrap();
                }
                out.push('\n');
            }
        }
        out
    }
}

fn labels_text<'a, I>(ids: impl Iterator<Item = &'a str>, rows: impl Iterator<Item = I>) -> String
where
    I: Iterator<Item = i8>,
{
    let mut out = String::new();
    for (id, row) in ids.zip(rows) {
        out.push_str(id);
        for v in row {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// `derive_index_sets` in free-function form.
pub fn derive_index_sets(ds: &Dataset) -> (Vec<Pair>, Vec<Pair>) {
    ds.index_sets()
}

/// Complete ground-truth labels, replayed by the simulated oracle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleTruth {
    labels: Vec<Vec<bool>>,
    num_classes: usize,
}

impl OracleTruth {
    pub fn new(labels: Vec<Vec<bool>>) -> Result<Self> {
        let num_classes = labels.first().map_or(0, Vec::len);
        if let Some(row) = labels.iter().find(|r| r.len() != num_classes) {
            return Err(Error::DimensionMismatch {
                expected: num_classes,
                found: row.len(),
            });
        }
        Ok(OracleTruth {
            labels,
            num_classes,
        })
    }

    /// Truth from a dataset whose labels are all known.
    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        let labels = ds
            .labels()
            .iter()
            .enumerate()
            .map(|(b, lv)| {
                lv.entries()
                    .iter()
                    .enumerate()
                    .map(|(c, l)| l.value().ok_or(Error::IndexOutOfRange { bag: b, class: c }))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|_| Error::Config("oracle labels must not contain -1".into()))?;
        OracleTruth::new(labels)
    }

    pub fn num_bags(&self) -> usize {
        self.labels.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, b: usize, c: usize) -> Result<bool> {
        self.labels
            .get(b)
            .and_then(|row| row.get(c))
            .copied()
            .ok_or(Error::IndexOutOfRange { bag: b, class: c })
    }

    pub fn row(&self, b: usize) -> &[bool] {
        &self.labels[b]
    }

    pub fn rows(&self) -> &[Vec<bool>] {
        &self.labels
    }

    pub fn subset(&self, indices: &[usize]) -> OracleTruth {
        OracleTruth {
            labels: indices.iter().map(|&i| self.labels[i].clone()).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Checks that every observed label of `ds` agrees with the truth.
    pub fn consistent_with(&self, ds: &Dataset) -> bool {
        ds.num_bags() == self.num_bags()
            && ds.num_classes() == self.num_classes
            && ds
                .labels()
                .iter()
                .zip(&self.labels)
                .all(|(lv, row)| lv.observed().all(|(c, v)| row[c] == v))
    }

    pub fn label_vectors(&self) -> Vec<LabelVector> {
        self.labels
            .iter()
            .map(|r| LabelVector::from_bools(r))
            .collect()
    }

    pub fn to_text(&self, ids: &[&str]) -> String {
        labels_text(
            ids.iter().copied(),
            self.labels.iter().map(|r| r.iter().map(|&v| v as i8)),
        )
    }
}

/// How many bags start out fully labeled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskPolicy {
    Count(usize),
    Fraction(f64),
}

impl Default for MaskPolicy {
    fn default() -> Self {
        MaskPolicy::Fraction(0.05)
    }
}

/// Keeps a seeded random subset of bags fully labeled and hides every other
/// label.
pub fn mask_labels(
    bags: &[Bag],
    truth: &OracleTruth,
    policy: MaskPolicy,
    seed: u64,
) -> Result<Dataset> {
    let n = bags.len();
    if truth.num_bags() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: truth.num_bags(),
        });
    }
    let keep = match policy {
        MaskPolicy::Count(k) if k <= n => k,
        MaskPolicy::Count(k) => {
            return Err(Error::Config(format!("cannot fully label {k} of {n} bags")))
        }
        MaskPolicy::Fraction(f) if (0.0..=1.0).contains(&f) => (f * n as f64).round() as usize,
        MaskPolicy::Fraction(f) => {
            return Err(Error::Config(format!(
                "initial labeled fraction must lie in [0, 1], got {f}"
            )))
        }
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let mut labels = vec![LabelVector::unknown(truth.num_classes()); n];
    for &b in &order[..keep] {
        labels[b] = LabelVector::from_bools(truth.row(b));
    }
    Dataset::new(bags.to_vec(), labels)
}

/// Shape of a synthetic problem.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub bags: usize,
    pub classes: usize,
    pub dim: usize,
    /// Inclusive range of instances per bag.
    pub bag_size: (usize, usize),
}

/// Output of [`generate_synthetic`]: a fully labeled dataset, its truth, and
/// the latent instance classes the labels were built from.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub truth: OracleTruth,
    pub instance_classes: Vec<Vec<usize>>,
}

/// Class weights drawn from `N(0, separation²)` per entry.
pub fn synthetic_weights(classes: usize, dim: usize, separation: f64, seed: u64) -> ParamMatrix {
    let mut rng = rng_from_seed(seed);
    let data = (0..classes * dim)
        .map(|_| separation * Distribution::<f64>::sample(&StandardNormal, &mut rng))
        .collect::<Vec<f64>>();
    ParamMatrix::from_flat(classes, dim, data).expect("finite normal draws")
}

/// Standard normal instances whose latent classes are sampled from the
/// softmax model under `w_true`; bag labels follow the OR rule.
pub fn generate_synthetic(
    spec: &SyntheticSpec,
    w_true: &ParamMatrix,
    seed: u64,
) -> Result<SyntheticData> {
    let (lo, hi) = spec.bag_size;
    if lo < 1 || hi < lo {
        return Err(Error::Config(format!(
            "invalid bag size range ({lo}, {hi})"
        )));
    }
    if spec.bags == 0 {
        return Err(Error::Config("need at least one bag".into()));
    }
    if w_true.classes() != spec.classes || w_true.dim() != spec.dim {
        return Err(Error::DimensionMismatch {
            expected: spec.classes * spec.dim,
            found: w_true.classes() * w_true.dim(),
        });
    }
    let mut rng = rng_from_seed(seed);
    let width = spec.bags.to_string().len();
    let mut bags = Vec::with_capacity(spec.bags);
    let mut truth = Vec::with_capacity(spec.bags);
    let mut latent = Vec::with_capacity(spec.bags);
    for b in 0..spec.bags {
        let n = rng.random_range(lo..=hi);
        let mut instances = Vec::with_capacity(n);
        let mut classes = Vec::with_capacity(n);
        let mut present = vec![false; spec.classes];
        for _ in 0..n {
            let x: Vec<f64> = (0..spec.dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let probs = instance_posterior(w_true, &x)?;
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut class = spec.classes - 1;
            for (c, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    class = c;
                    break;
                }
            }
            present[class] = true;
            classes.push(class);
            instances.push(x);
        }
        bags.push(Bag::new(format!("bag{b:0width$}"), instances)?);
        truth.push(present);
        latent.push(classes);
    }
    let truth = OracleTruth::new(truth)?;
    let dataset = Dataset::new(bags, truth.label_vectors())?;
    Ok(SyntheticData {
        dataset,
        truth,
        instance_classes: latent,
    })
}

/// Seeded `folds`-way partition of bag indices; returns `(train, test)` per
/// fold. Test splits differ in size by at most one.
pub fn cross_validation_splits(
    num_bags: usize,
    folds: usize,
    seed: u64,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if folds < 2 || folds > num_bags {
        return Err(Error::Config(format!(
            "folds must lie in [2, {num_bags}], got {folds}"
        )));
    }
    let mut order: Vec<usize> = (0..num_bags).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let base = num_bags / folds;
    let extra = num_bags % folds;
    let mut splits = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let size = base + usize::from(f < extra);
        let mut test = order[start..start + size].to_vec();
        test.sort_unstable();
        let mut train: Vec<usize> = order[..start]
            .iter()
            .chain(&order[start + size..])
            .copied()
            .collect();
        train.sort_unstable();
        splits.push((train, test));
        start += size;
    }
    Ok(splits)
}

/// Per-feature z-scoring fitted on one dataset and applied to others.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(ds: &Dataset) -> Self {
        let d = ds.feature_dim();
        let mut mean = vec![0.0; d];
        let mut sq = vec![0.0; d];
        let mut n = 0usize;
        for x in ds.bags().iter().flat_map(Bag::instances) {
            n += 1;
            for j in 0..d {
                mean[j] += x[j];
                sq[j] += x[j] * x[j];
            }
        }
        let n = n as f64;
        let scale = mean
            .iter_mut()
            .zip(&sq)
            .map(|(m, s)| {
                *m /= n;
                let var = (s / n - *m * *m).max(0.0);
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn apply(&self, ds: &Dataset) -> Dataset {
        let mut out = ds.clone();
        for bag in &mut out.bags {
            bag.map_features(|j, v| (v - self.mean[j]) / self.scale[j]);
        }
        out
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

struct LabelRows {
    ids: Vec<String>,
    rows: HashMap<String, Vec<TriLabel>>,
}

fn parse_label_rows(path: &Path, allow_unknown: bool) -> Result<LabelRows> {
    let text = read(path)?;
    let mut ids = Vec::new();
    let mut rows = HashMap::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let id = fields.next().unwrap_or_default().to_string();
        let values = fields
            .map(|f| {
                let label = f
                    .parse::<i64>()
                    .ok()
                    .and_then(TriLabel::from_code)
                    .filter(|l| allow_unknown || l.is_known());
                label.ok_or_else(|| Error::InvalidLabel {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    value: f.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let expected = *width.get_or_insert(values.len());
        if values.len() != expected {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: format!("expected {expected} labels, found {}", values.len()),
            });
        }
        if rows.insert(id.clone(), values).is_some() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: format!("duplicate bag `{id}`"),
            });
        }
        ids.push(id);
    }
    Ok(LabelRows { ids, rows })
}

fn parse_features(path: &Path) -> Result<Vec<(String, Vec<Vec<f64>>)>> {
    let text = read(path)?;
    let mut order: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut dim = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let id = fields.next().unwrap_or_default().to_string();
        let x = fields
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        path: path.to_path_buf(),
                        line: lineno + 1,
                        msg: format!("bad feature value `{f}`"),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        let expected = *dim.get_or_insert(x.len());
        if x.len() != expected || x.is_empty() {
            return Err(Error::RaggedFeatures {
                path: path.to_path_buf(),
                line: lineno + 1,
                expected,
                found: x.len(),
            });
        }
        let slot = *index.entry(id.clone()).or_insert_with(|| {
            order.push((id, Vec::new()));
            order.len() - 1
        });
        order[slot].1.push(x);
    }
    Ok(order)
}

/// Reads a features file and a labels file; bags follow first appearance in
/// the features file.
pub fn load_dataset(features_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let features = parse_features(features_path)?;
    let LabelRows { ids, mut rows } = parse_label_rows(labels_path, true)?;
    let mut bags = Vec::with_capacity(features.len());
    let mut labels = Vec::with_capacity(features.len());
    for (id, instances) in features {
        let Some(row) = rows.remove(&id) else {
            return Err(Error::BagMismatch {
                id,
                present_in: "features",
            });
        };
        labels.push(LabelVector::new(row));
        bags.push(Bag::new(id, instances)?);
    }
    if let Some(id) = ids.into_iter().find(|id| rows.contains_key(id)) {
        return Err(Error::BagMismatch {
            id,
            present_in: "labels",
        });
    }
    Dataset::new(bags, labels)
}

/// Reads an oracle-truth file (labels restricted to 0/1) aligned with `ds`.
pub fn load_truth(path: &Path, ds: &Dataset) -> Result<OracleTruth> {
    let LabelRows { ids, mut rows } = parse_label_rows(path, false)?;
    let mut out = Vec::with_capacity(ds.num_bags());
    for bag in ds.bags() {
        let row = rows.remove(bag.id()).ok_or_else(|| Error::BagMismatch {
            id: bag.id().to_string(),
            present_in: "features",
        })?;
        out.push(row.iter().map(|l| l.value() == Some(true)).collect());
    }
    if let Some(id) = ids.into_iter().find(|id| rows.contains_key(id)) {
        return Err(Error::BagMismatch {
            id,
            present_in: "truth",
        });
    }
    OracleTruth::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn tiny(labels: Vec<Vec<i64>>) -> Dataset {
        let bags = (0..labels.len())
            .map(|b| Bag::new(format!("b{b}"), vec![vec![b as f64, 1.0]]).unwrap())
            .collect();
        let labels = labels
            .into_iter()
            .map(|r| {
                LabelVector::new(
                    r.into_iter()
                        .map(|v| TriLabel::from_code(v).unwrap())
                        .collect(),
                )
            })
            .collect();
        Dataset::new(bags, labels).unwrap()
    }

    #[test]
    fn worked_example_sets() {
        let lv = LabelVector::new(
            [0, -1, 1, 1, 0, -1]
                .into_iter()
                .map(|v| TriLabel::from_code(v).unwrap())
                .collect(),
        );
        // 1-based {1,3,4,5}, {3,4}, {1,5}, {2,6}
        assert_eq!(lv.available(), vec![0, 2, 3, 4]);
        assert_eq!(lv.positive(), vec![2, 3]);
        assert_eq!(lv.negative(), vec![0, 4]);
        assert_eq!(lv.unlabeled(), vec![1, 5]);
    }

    #[test]
    fn index_sets_extremes() {
        let ds = tiny(vec![vec![-1, -1, -1]; 4]);
        let (l, u) = ds.index_sets();
        assert!(l.is_empty());
        assert_eq!(u.len(), 12);
        let ds = tiny(vec![vec![0, 1, 0]; 4]);
        let (l, u) = ds.index_sets();
        assert_eq!(l.len(), 12);
        assert!(u.is_empty());
    }

    #[test]
    fn reveal_moves_exactly_one_pair() {
        let mut ds = tiny(vec![vec![-1; 6]; 3]);
        let before = ds.clone();
        ds.reveal_label(2, 4, true).unwrap();
        assert_eq!(ds.num_available(), 1);
        assert_eq!(ds.num_unavailable(), 17);
        assert_eq!(ds.label(2, 4), TriLabel::Positive);
        for b in 0..3 {
            for c in 0..6 {
                if (b, c) != (2, 4) {
                    assert_eq!(ds.label(b, c), before.label(b, c));
                }
            }
        }
        assert!(matches!(
            ds.reveal_label(2, 4, false),
            Err(Error::AlreadyLabeled { .. })
        ));
        assert!(matches!(
            ds.reveal_label(3, 0, false),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn single_class_rejected() {
        let bag = Bag::new("a", vec![vec![1.0]]).unwrap();
        assert!(Dataset::new(vec![bag], vec![LabelVector::unknown(1)]).is_err());
    }

    fn spec(bags: usize) -> SyntheticSpec {
        SyntheticSpec {
            bags,
            classes: 4,
            dim: 3,
            bag_size: (1, 4),
        }
    }

    #[test]
    fn synthetic_follows_or_rule_and_is_deterministic() {
        let w = synthetic_weights(4, 3, 2.0, 11);
        let a = generate_synthetic(&spec(10), &w, 5).unwrap();
        assert_eq!(a.dataset.num_bags(), 10);
        for (b, classes) in a.instance_classes.iter().enumerate() {
            assert_eq!(classes.len(), a.dataset.bag(b).len());
            for c in 0..4 {
                assert_eq!(a.truth.get(b, c).unwrap(), classes.contains(&c));
            }
        }
        let b = generate_synthetic(&spec(10), &w, 5).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.dataset.features_to_text(), b.dataset.features_to_text());
        assert!(generate_synthetic(&spec(10), &ParamMatrix::zeros(3, 3), 5).is_err());
    }

    #[test]
    fn masking_policies() {
        let w = synthetic_weights(4, 3, 2.0, 1);
        let data = generate_synthetic(&spec(100), &w, 2).unwrap();
        let bags = data.dataset.bags();
        let full = mask_labels(bags, &data.truth, MaskPolicy::Fraction(1.0), 0).unwrap();
        assert_eq!(full.num_unavailable(), 0);
        let none = mask_labels(bags, &data.truth, MaskPolicy::Fraction(0.0), 0).unwrap();
        assert_eq!(none.num_available(), 0);
        let some = mask_labels(bags, &data.truth, MaskPolicy::Fraction(0.05), 9).unwrap();
        let complete = some.labels().iter().filter(|l| l.is_complete()).count();
        assert_eq!(complete, 5);
        assert_eq!(some.num_available(), 5 * 4);
        assert!(data.truth.consistent_with(&some));
        let again = mask_labels(bags, &data.truth, MaskPolicy::Fraction(0.05), 9).unwrap();
        assert_eq!(some, again);
        assert!(mask_labels(bags, &data.truth, MaskPolicy::Fraction(1.5), 0).is_err());
        assert!(mask_labels(bags, &data.truth, MaskPolicy::Fraction(-0.1), 0).is_err());
    }

    #[test]
    fn cv_split_sizes() {
        let splits = cross_validation_splits(10, 10, 3).unwrap();
        assert!(splits.iter().all(|(_, t)| t.len() == 1));
        let splits = cross_validation_splits(645, 10, 3).unwrap();
        let mut sizes: Vec<usize> = splits.iter().map(|(_, t)| t.len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![64, 64, 64, 64, 64, 65, 65, 65, 65, 65]);
        let mut all: Vec<usize> = splits.iter().flat_map(|(_, t)| t.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..645).collect::<Vec<_>>());
        for (train, test) in &splits {
            assert_eq!(train.len() + test.len(), 645);
            assert!(test.iter().all(|i| train.binary_search(i).is_err()));
        }
        assert!(cross_validation_splits(5, 6, 0).is_err());
        assert!(cross_validation_splits(5, 1, 0).is_err());
    }

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p)
            .unwrap()
            .write_all(body.as_bytes())
            .unwrap();
        p
    }

    #[test]
    fn load_well_formed_files() {
        let dir = tempfile::tempdir().unwrap();
        let f = write(
            dir.path(),
            "f.csv",
            "w1,0.5,1e-3\nw2,1,2\nw1,-3.5,4\nw3,0,0\n",
        );
        let l = write(dir.path(), "l.csv", "w2,0,1,-1\nw1,1,1,0\nw3,-1,-1,-1\n");
        let ds = load_dataset(&f, &l).unwrap();
        assert_eq!(ds.num_bags(), 3);
        assert_eq!(ds.feature_dim(), 2);
        assert_eq!(ds.num_classes(), 3);
        assert_eq!(ds.bag(0).id(), "w1");
        assert_eq!(ds.bag(0).len(), 2);
        assert_eq!(ds.label(1, 2), TriLabel::Unknown);
        assert_eq!(ds.label(0, 0), TriLabel::Positive);
    }

    #[test]
    fn letter_shaped_files() {
        let dir = tempfile::tempdir().unwrap();
        let row: String = (0..16).map(|j| format!(",{j}")).collect();
        let f = write(
            dir.path(),
            "f.csv",
            &format!("cat{row}\ncat{row}\ndog{row}\n"),
        );
        let labels: String = (0..26)
            .map(|j| if j % 3 == 0 { ",1" } else { ",0" })
            .collect();
        let l = write(dir.path(), "l.csv", &format!("cat{labels}\ndog{labels}\n"));
        let ds = load_dataset(&f, &l).unwrap();
        assert_eq!((ds.feature_dim(), ds.num_classes()), (16, 26));
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        let f = write(dir.path(), "f.csv", "a,1,2\nb,3,4\n");
        let bad_label = write(dir.path(), "l1.csv", "a,0,2\nb,0,0\n");
        let err = load_dataset(&f, &bad_label).unwrap_err();
        assert!(err.to_string().contains("invalid label value"), "{err}");

        let ragged = write(dir.path(), "f2.csv", "a,1,2\nb,3\n");
        let ok_labels = write(dir.path(), "l2.csv", "a,0,1\nb,1,0\n");
        assert!(matches!(
            load_dataset(&ragged, &ok_labels),
            Err(Error::RaggedFeatures { .. })
        ));

        let extra = write(dir.path(), "l3.csv", "a,0,1\nb,1,0\nc,1,1\n");
        assert!(matches!(
            load_dataset(&f, &extra),
            Err(Error::BagMismatch {
                present_in: "labels",
                ..
            })
        ));
        let missing = write(dir.path(), "l4.csv", "a,0,1\n");
        assert!(matches!(
            load_dataset(&f, &missing),
            Err(Error::BagMismatch {
                present_in: "features",
                ..
            })
        ));
        let empty = write(dir.path(), "f5.csv", "a\nb\n");
        assert!(load_dataset(&empty, &ok_labels).is_err());

        let ds = load_dataset(&f, &ok_labels).unwrap();
        let truth_bad = write(dir.path(), "t.csv", "a,0,-1\nb,1,0\n");
        assert!(load_truth(&truth_bad, &ds).is_err());
        let truth_ok = write(dir.path(), "t2.csv", "b,1,0\na,0,1\n");
        let truth = load_truth(&truth_ok, &ds).unwrap();
        assert_eq!(truth.row(0), &[false, true]);
    }

    #[test]
    fn text_round_trip() {
        let w = synthetic_weights(3, 2, 1.0, 4);
        let data = generate_synthetic(
            &SyntheticSpec {
                bags: 5,
                classes: 3,
                dim: 2,
                bag_size: (1, 3),
            },
            &w,
            8,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let f = write(dir.path(), "f.csv", &data.dataset.features_to_text());
        let l = write(dir.path(), "l.csv", &data.dataset.labels_to_text());
        let back = load_dataset(&f, &l).unwrap();
        assert_eq!(back, data.dataset);
    }

    #[test]
    fn standardizer_centers_features() {
        let ds = tiny(vec![vec![0, 1]; 5]);
        let z = Standardizer::fit(&ds).apply(&ds);
        let mean: f64 = z.bags().iter().map(|b| b.instance(0)[0]).sum::<f64>() / 5.0;
        assert!(mean.abs() < 1e-12);
        // constant column keeps unit scale
        assert!(z.bags().iter().all(|b| b.instance(0)[1] == 0.0));
    }
}
