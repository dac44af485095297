//! Random-forest PI detector with confidence-gated predictions.
//!
//! Trees are grown on bootstrap resamples with Gini splits over a random
//! subset of features per node, without depth limit. The forest's
//! probability for a pair is the fraction of trees voting positive; a
//! prediction whose winning fraction stays below the confidence threshold is
//! rejected instead of labeled.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::PairKey;
use crate::error::{Error, Result};
use crate::features::{FeatureVector, FEATURE_NAMES, N_FEATURES};
use crate::labeling::{Label, LabeledSample};
use crate::SCHEMA_VERSION;

pub const DEFAULT_TREES: usize = 20;
pub const DEFAULT_THRESHOLD: f64 = 0.75;
pub const DEFAULT_SPLIT: f64 = 0.8;

// Slack for comparing vote fractions against decimal thresholds.
const GATE_EPS: f64 = 1e-12;

/// Stratified seeded split. Samples are ordered by pair before shuffling so
/// the result does not depend on input order.
pub fn split(
    dataset: &[LabeledSample],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<LabeledSample>, Vec<LabeledSample>)> {
    if dataset.len() < 10 {
        return Err(Error::Split(format!(
            "need at least 10 samples, got {}",
            dataset.len()
        )));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Split(format!(
            "ratio {ratio} leaves the train or test side empty"
        )));
    }
    let mut sorted: Vec<&LabeledSample> = dataset.iter().collect();
    sorted.sort_by(|a, b| a.pair.cmp(&b.pair));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [Label::Negative, Label::Positive] {
        let mut members: Vec<&LabeledSample> =
            sorted.iter().copied().filter(|s| s.label == class).collect();
        if members.is_empty() {
            return Err(Error::SingleClass);
        }
        members.shuffle(&mut rng);
        let n_train = ((members.len() as f64) * ratio).round() as usize;
        let n_train = n_train.min(members.len());
        train.extend(members[..n_train].iter().map(|s| (*s).clone()));
        test.extend(members[n_train..].iter().map(|s| (*s).clone()));
    }
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    if train.is_empty() {
        return Err(Error::Split("training side is empty".into()));
    }
    train.sort_by(|a, b| a.pair.cmp(&b.pair));
    test.sort_by(|a, b| a.pair.cmp(&b.pair));
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        negative: u32,
        positive: u32,
    },
    Split {
        feature: usize,
        /// Rows with `x[feature] <= threshold` go left.
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    fn leaf(counts: [u32; 2]) -> Self {
        Node::Leaf {
            negative: counts[0],
            positive: counts[1],
        }
    }

    fn votes_positive(&self, x: &[f64; N_FEATURES]) -> bool {
        let mut node = self;
        loop {
            match node {
                Node::Leaf { negative, positive } => return positive > negative,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if x[*feature] <= *threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    fn features_used(&self, out: &mut Vec<usize>) {
        if let Node::Split {
            feature, left, right, ..
        } = self
        {
            out.push(*feature);
            left.features_used(out);
            right.features_used(out);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub n_trees: usize,
    pub seed: u64,
    /// Candidate features per split; `ceil(sqrt(17)) = 5` when `None`.
    pub max_features: Option<usize>,
    pub min_samples_leaf: usize,
    /// Stored verbatim in the model (seconds since epoch).
    pub trained_at: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            n_trees: DEFAULT_TREES,
            seed: 0,
            max_features: None,
            min_samples_leaf: 1,
            trained_at: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub schema_version: u32,
    pub n_trees: usize,
    pub seed: u64,
    pub max_features: usize,
    pub min_samples_leaf: usize,
    pub feature_names: Vec<String>,
    pub trained_at: u64,
    pub trees: Vec<Node>,
}

struct TrainData {
    x: Vec<[f64; N_FEATURES]>,
    y: Vec<bool>,
}

/// Trains the forest. Deterministic for fixed options and sample set.
pub fn train(train_set: &[LabeledSample], opts: &TrainOptions) -> Result<ForestModel> {
    let mut sorted: Vec<&LabeledSample> = train_set.iter().collect();
    sorted.sort_by(|a, b| a.pair.cmp(&b.pair));
    let data = TrainData {
        x: sorted.iter().map(|s| s.features.to_array()).collect(),
        y: sorted.iter().map(|s| s.label == Label::Positive).collect(),
    };
    let pos = data.y.iter().filter(|&&y| y).count();
    if pos == 0 || pos == data.y.len() {
        return Err(Error::SingleClass);
    }
    if opts.n_trees == 0 {
        return Err(Error::Split("forest needs at least one tree".into()));
    }
    let max_features = opts
        .max_features
        .unwrap_or_else(|| (N_FEATURES as f64).sqrt().ceil() as usize)
        .clamp(1, N_FEATURES);
    let min_leaf = opts.min_samples_leaf.max(1);

    let first = &data.x[0];
    if data.x.iter().all(|row| row == first) {
        log::warn!("all training rows are identical; the forest degenerates to majority leaves");
    }

    let trees: Vec<Node> = (0..opts.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(t as u64);
            let n = data.x.len();
            let mut rows: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            grow(&data, &mut rows, &mut rng, max_features, min_leaf)
        })
        .collect();

    Ok(ForestModel {
        schema_version: SCHEMA_VERSION,
        n_trees: opts.n_trees,
        seed: opts.seed,
        max_features,
        min_samples_leaf: min_leaf,
        feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        trained_at: opts.trained_at,
        trees,
    })
}

fn class_counts(data: &TrainData, rows: &[usize]) -> [u32; 2] {
    let mut c = [0u32; 2];
    for &r in rows {
        c[usize::from(data.y[r])] += 1;
    }
    c
}

fn gini(c: [u32; 2]) -> f64 {
    let n = (c[0] + c[1]) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let p = c[1] as f64 / n;
    2.0 * p * (1.0 - p)
}

struct Candidate {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

fn grow(
    data: &TrainData,
    rows: &mut [usize],
    rng: &mut ChaCha8Rng,
    max_features: usize,
    min_leaf: usize,
) -> Node {
    let counts = class_counts(data, rows);
    if counts[0] == 0 || counts[1] == 0 || rows.len() < 2 * min_leaf {
        return Node::leaf(counts);
    }

    let mut order: Vec<usize> = (0..N_FEATURES).collect();
    order.shuffle(rng);

    // Constant features do not use up the candidate budget.
    let mut best: Option<Candidate> = None;
    let mut examined = 0;
    for &f in &order {
        if examined == max_features {
            break;
        }
        let first = data.x[rows[0]][f];
        if rows.iter().all(|&r| data.x[r][f] == first) {
            continue;
        }
        examined += 1;
        if let Some(c) = best_split(data, rows, f, min_leaf) {
            if best.as_ref().is_none_or(|b| c.impurity < b.impurity) {
                best = Some(c);
            }
        }
    }
    let Some(best) = best else {
        return Node::leaf(counts);
    };

    let mut cut = 0;
    for i in 0..rows.len() {
        if data.x[rows[i]][best.feature] <= best.threshold {
            rows.swap(i, cut);
            cut += 1;
        }
    }
    let (left, right) = rows.split_at_mut(cut);
    Node::Split {
        feature: best.feature,
        threshold: best.threshold,
        left: Box::new(grow(data, left, rng, max_features, min_leaf)),
        right: Box::new(grow(data, right, rng, max_features, min_leaf)),
    }
}

fn best_split(data: &TrainData, rows: &[usize], f: usize, min_leaf: usize) -> Option<Candidate> {
    let mut col: Vec<(f64, bool)> = rows.iter().map(|&r| (data.x[r][f], data.y[r])).collect();
    col.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = col.len();
    let total = class_counts(data, rows);
    let mut left = [0u32; 2];
    let mut best: Option<Candidate> = None;
    for i in 0..n - 1 {
        left[usize::from(col[i].1)] += 1;
        let (lo, hi) = (col[i].0, col[i + 1].0);
        if lo == hi || i + 1 < min_leaf || n - i - 1 < min_leaf {
            continue;
        }
        let right = [total[0] - left[0], total[1] - left[1]];
        let nl = (i + 1) as f64;
        let nr = (n - i - 1) as f64;
        let impurity = (nl * gini(left) + nr * gini(right)) / n as f64;
        if best.as_ref().is_none_or(|b| impurity < b.impurity) {
            let mut threshold = lo + (hi - lo) / 2.0;
            if threshold >= hi {
                threshold = lo;
            }
            best = Some(Candidate {
                feature: f,
                threshold,
                impurity,
            });
        }
    }
    best
}

impl ForestModel {
    /// Fraction of trees voting positive; always a multiple of `1 / n_trees`.
    pub fn probability(&self, x: &[f64; N_FEATURES]) -> f64 {
        let votes = self.trees.iter().filter(|t| t.votes_positive(x)).count();
        votes as f64 / self.trees.len() as f64
    }

    /// How often each feature is used as a split, in feature order.
    pub fn split_counts(&self) -> [usize; N_FEATURES] {
        let mut used = Vec::new();
        for t in &self.trees {
            t.features_used(&mut used);
        }
        let mut out = [0; N_FEATURES];
        for f in used {
            out[f] += 1;
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json<R: Read>(reader: R) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_reader(reader);
        de.disable_recursion_limit();
        let model = ForestModel::deserialize(&mut de)?;
        if model.schema_version != SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                artifact: "model".into(),
                expected: SCHEMA_VERSION,
                found: model.schema_version,
            });
        }
        if model.feature_names.len() != N_FEATURES || model.trees.len() != model.n_trees {
            return Err(Error::InvalidArtifact {
                artifact: "model".into(),
                reason: "feature list or tree count does not match".into(),
            });
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|source| Error::File {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|source| Error::File {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(std::io::BufReader::new(file))
    }

    /// Short stable identifier derived from the serialized model.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(self.to_json().unwrap_or_default().as_bytes());
        hex::encode(&digest[..8])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictedLabel {
    Positive,
    Negative,
    Rejected,
}

/// Applies the confidence gate to a positive-class probability. Exact ties
/// at 0.5 resolve to negative.
pub fn gate(probability: f64, threshold: f64) -> PredictedLabel {
    let confidence = probability.max(1.0 - probability);
    if confidence + GATE_EPS < threshold {
        PredictedLabel::Rejected
    } else if probability > 0.5 {
        PredictedLabel::Positive
    } else {
        PredictedLabel::Negative
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub pair: PairKey,
    pub probability_positive: f64,
    pub label: PredictedLabel,
    pub threshold: f64,
}

impl Prediction {
    pub fn regate(&self, threshold: f64) -> Prediction {
        Prediction {
            label: gate(self.probability_positive, threshold),
            threshold,
            ..self.clone()
        }
    }
}

pub fn predict(model: &ForestModel, pair: &PairKey, features: &[f64], threshold: f64) -> Result<Prediction> {
    let x: [f64; N_FEATURES] = features.try_into().map_err(|_| Error::Arity {
        expected: N_FEATURES,
        found: features.len(),
    })?;
    let p = model.probability(&x);
    Ok(Prediction {
        pair: pair.clone(),
        probability_positive: p,
        label: gate(p, threshold),
        threshold,
    })
}

pub fn predict_matrix(
    model: &ForestModel,
    matrix: &BTreeMap<PairKey, FeatureVector>,
    threshold: f64,
) -> Vec<Prediction> {
    matrix
        .iter()
        .map(|(pair, fv)| {
            let p = model.probability(&fv.to_array());
            Prediction {
                pair: pair.clone(),
                probability_positive: p,
                label: gate(p, threshold),
                threshold,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub true_positive: usize,
    pub false_positive: usize,
    pub true_negative: usize,
    pub false_negative: usize,
    pub rejected: usize,
}

impl Confusion {
    pub fn accepted(&self) -> usize {
        self.true_positive + self.false_positive + self.true_negative + self.false_negative
    }

    pub fn total(&self) -> usize {
        self.accepted() + self.rejected
    }

    pub fn precision(&self) -> Option<f64> {
        ratio(self.true_positive, self.true_positive + self.false_positive)
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.true_positive, self.true_positive + self.false_negative)
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.true_positive + self.true_negative, self.accepted())
    }

    pub fn f1(&self) -> Option<f64> {
        let (p, r) = (self.precision()?, self.recall()?);
        if p + r == 0.0 {
            Some(0.0)
        } else {
            Some(2.0 * p * r / (p + r))
        }
    }

    pub fn coverage(&self) -> f64 {
        ratio(self.accepted(), self.total()).unwrap_or(0.0)
    }

    fn add(&mut self, truth: Label, predicted: PredictedLabel) {
        match (predicted, truth) {
            (PredictedLabel::Rejected, _) => self.rejected += 1,
            (PredictedLabel::Positive, Label::Positive) => self.true_positive += 1,
            (PredictedLabel::Positive, Label::Negative) => self.false_positive += 1,
            (PredictedLabel::Negative, Label::Negative) => self.true_negative += 1,
            (PredictedLabel::Negative, Label::Positive) => self.false_negative += 1,
        }
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserBucket {
    pub samples: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    pub rejected: usize,
}

/// Ungated predictions binned by the confidence of the predicted class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub correct: usize,
    pub incorrect: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub threshold: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
    pub coverage: f64,
    pub confusion: Confusion,
    /// Keyed by the sample's `num_users` feature.
    pub by_user_count: BTreeMap<u64, UserBucket>,
    pub histogram: Vec<HistogramBin>,
}

const HISTOGRAM_BINS: usize = 10;

pub fn evaluate(model: &ForestModel, test_set: &[LabeledSample], threshold: f64) -> Result<EvalReport> {
    if test_set.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let mut confusion = Confusion::default();
    let mut by_user_count: BTreeMap<u64, UserBucket> = BTreeMap::new();
    let mut histogram: Vec<HistogramBin> = (0..HISTOGRAM_BINS)
        .map(|i| HistogramBin {
            lower: 0.5 + 0.05 * i as f64,
            upper: 0.5 + 0.05 * (i + 1) as f64,
            correct: 0,
            incorrect: 0,
        })
        .collect();

    for s in test_set {
        let p = model.probability(&s.features.to_array());
        let label = gate(p, threshold);
        confusion.add(s.label, label);

        let bucket = by_user_count.entry(s.features.num_users).or_default();
        bucket.samples += 1;
        match (label, s.label) {
            (PredictedLabel::Rejected, _) => bucket.rejected += 1,
            (PredictedLabel::Positive, Label::Negative) => bucket.false_positive += 1,
            (PredictedLabel::Negative, Label::Positive) => bucket.false_negative += 1,
            _ => {}
        }

        let ungated = if p > 0.5 { Label::Positive } else { Label::Negative };
        let confidence = p.max(1.0 - p);
        let bin = (((confidence - 0.5) / 0.05 + GATE_EPS).floor() as usize).min(HISTOGRAM_BINS - 1);
        if ungated == s.label {
            histogram[bin].correct += 1;
        } else {
            histogram[bin].incorrect += 1;
        }
    }

    if confusion.accepted() == 0 {
        log::warn!("every test prediction was rejected at threshold {threshold}");
    }
    Ok(EvalReport {
        schema_version: SCHEMA_VERSION,
        threshold,
        precision: confusion.precision(),
        recall: confusion.recall(),
        accuracy: confusion.accuracy(),
        f1: confusion.f1(),
        coverage: confusion.coverage(),
        confusion,
        by_user_count,
        histogram,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub coverage: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

pub fn threshold_sweep(model: &ForestModel, test_set: &[LabeledSample], thresholds: &[f64]) -> Vec<SweepPoint> {
    let probs: Vec<(f64, Label)> = test_set
        .iter()
        .map(|s| (model.probability(&s.features.to_array()), s.label))
        .collect();
    thresholds
        .iter()
        .map(|&t| {
            let mut c = Confusion::default();
            for &(p, truth) in &probs {
                c.add(truth, gate(p, t));
            }
            SweepPoint {
                threshold: t,
                coverage: c.coverage(),
                precision: c.precision(),
                recall: c.recall(),
                f1: c.f1(),
            }
        })
        .collect()
}

/// `0.5, 0.55, ..., 0.95`.
pub fn default_sweep() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_histogram_csv<W: Write>(report: &EvalReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["confidence_lower", "confidence_upper", "correct", "incorrect"])?;
    for b in &report.histogram {
        w.write_record([
            b.lower.to_string(),
            b.upper.to_string(),
            b.correct.to_string(),
            b.incorrect.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_user_breakdown_csv<W: Write>(report: &EvalReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["num_users", "samples", "false_positive", "false_negative", "rejected"])?;
    for (users, b) in &report.by_user_count {
        w.write_record([
            users.to_string(),
            b.samples.to_string(),
            b.false_positive.to_string(),
            b.false_negative.to_string(),
            b.rejected.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep_csv<W: Write>(points: &[SweepPoint], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["threshold", "coverage", "precision", "recall", "f1"])?;
    for p in points {
        w.write_record([
            p.threshold.to_string(),
            p.coverage.to_string(),
            opt(p.precision),
            opt(p.recall),
            opt(p.f1),
        ])?;
    }
    w.flush()?;
    Ok(())
}
