//! Gradient-boosted depth-2 regression trees, one ensemble per class.
//!
//! Each ensemble is trained one-vs-rest on the binomial log-likelihood with
//! labels in {-1, +1}, so that a single ensemble alone would give
//! `p = 1 / (1 + exp(-2F))`. The class scores are mapped to probabilities by
//! a softmax of `2 (F - h)` where `h` is a per-class threshold.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::uncertainty::ClassProbabilities;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoostConfig {
    pub rounds: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Fraction of each class drawn (without replacement) for every tree.
    pub subsample: f64,
    /// Features examined per split, capped at the feature dimension.
    pub max_features: usize,
}

impl Default for BoostConfig {
    fn default() -> Self {
        Self {
            rounds: 100,
            learning_rate: 0.1,
            seed: 0,
            subsample: 0.5,
            max_features: 10,
        }
    }
}

const MAX_DEPTH: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TreeNode {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    /// Samples with `x[feature] <= threshold` go left.
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            TreeNode::Leaf { value } => *value,
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if x[*feature] <= *threshold {
                    left.predict(x)
                } else {
                    right.predict(x)
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    fn max_feature(&self) -> Option<usize> {
        match self {
            TreeNode::Leaf { .. } => None,
            TreeNode::Split {
                feature, left, right, ..
            } => [Some(*feature), left.max_feature(), right.max_feature()]
                .into_iter()
                .flatten()
                .max(),
        }
    }
}

/// Classifier output `F`, one score per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScoreVector(pub Vec<f64>);

impl ScoreVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// `F_1 - F_0`, the decision score of a binary problem.
    pub fn binary_margin(&self) -> f64 {
        self.0[1] - self.0[0]
    }
}

/// Per-class thresholds `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ThresholdVector(pub Vec<f64>);

impl ThresholdVector {
    /// Multi-class mode always uses zero thresholds.
    pub fn zeros(classes: usize) -> Self {
        Self(vec![0.0; classes])
    }

    /// Binary threshold on the margin `F_1 - F_0`.
    pub fn binary(h: f64) -> Self {
        Self(vec![0.0, h])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoostedModel {
    pub version: u32,
    pub classes: usize,
    pub dim: usize,
    pub learning_rate: f64,
    /// `ensembles[c]` holds the trees of class `c`; leaf values are already shrunk.
    pub ensembles: Vec<Vec<TreeNode>>,
}

impl BoostedModel {
    pub fn scores(&self, x: &[f64]) -> Result<ScoreVector> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(self.scores_unchecked(x))
    }

    fn scores_unchecked(&self, x: &[f64]) -> ScoreVector {
        ScoreVector(
            self.ensembles
                .iter()
                .map(|trees| trees.iter().map(|t| t.predict(x)).sum())
                .collect(),
        )
    }

    /// Scores many samples; data-parallel but deterministic.
    pub fn scores_batch<X: AsRef<[f64]> + Sync>(&self, xs: &[X]) -> Result<Vec<ScoreVector>> {
        if let Some(x) = xs.iter().find(|x| x.as_ref().len() != self.dim) {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.as_ref().len(),
            });
        }
        Ok(xs.par_iter().map(|x| self.scores_unchecked(x.as_ref())).collect())
    }

    /// Predicted class under thresholds `h` (lowest index on ties).
    pub fn predict(&self, x: &[f64], h: &ThresholdVector) -> Result<usize> {
        Ok(scores_to_probs(&self.scores(x)?, h).argmax())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: BoostedModel = serde_json::from_str(text)?;
        if model.version != MODEL_FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported model format version {}",
                model.version
            )));
        }
        if model.ensembles.len() != model.classes {
            return Err(Error::invalid("ensemble count differs from class count"));
        }
        for tree in model.ensembles.iter().flatten() {
            if tree.depth() > MAX_DEPTH || tree.max_feature().is_some_and(|f| f >= model.dim) {
                return Err(Error::invalid("tree exceeds depth 2 or feature dimension"));
            }
        }
        Ok(model)
    }
}

/// Softmax of `2 (F - h)`, so the most probable class is `argmax(F - h)`.
pub fn scores_to_probs(scores: &ScoreVector, h: &ThresholdVector) -> ClassProbabilities {
    let z: Vec<f64> = scores
        .0
        .iter()
        .zip(&h.0)
        .map(|(f, t)| 2.0 * (f - t))
        .collect();
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = e.iter().sum();
    ClassProbabilities::from_vec_unchecked(e.into_iter().map(|v| v / sum).collect())
}

/// Trains one boosted ensemble per class.
pub fn train(features: &[Vec<f64>], labels: &[usize], classes: usize, config: &BoostConfig) -> Result<BoostedModel> {
    if features.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            got: labels.len(),
        });
    }
    if classes < 2 {
        return Err(Error::invalid("need at least two classes"));
    }
    if !(config.learning_rate > 0.0) || !(config.subsample > 0.0 && config.subsample <= 1.0) {
        return Err(Error::invalid("learning rate must be > 0 and subsample in (0, 1]"));
    }
    let dim = features.first().map_or(0, Vec::len);
    if let Some(x) = features.iter().find(|x| x.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: x.len(),
        });
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::ClassOutOfRange { class: y, classes });
        }
        by_class[y].push(i);
    }
    if let Some(empty) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::InsufficientLabels(empty));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let max_features = config.max_features.clamp(1, dim.max(1));
    let ensembles = (0..classes)
        .map(|class| {
            let target: Vec<f64> = labels.iter().map(|&y| if y == class { 1.0 } else { -1.0 }).collect();
            let mut f = vec![0.0; labels.len()];
            let mut trees = Vec::with_capacity(config.rounds);
            for _ in 0..config.rounds {
                // gradient of log(1 + exp(-2yF)) w.r.t. F, negated
                let grad: Vec<f64> = target
                    .iter()
                    .zip(&f)
                    .map(|(&y, &fi)| 2.0 * y / (1.0 + (2.0 * y * fi).exp()))
                    .collect();
                let rows = stratified_subsample(&by_class, config.subsample, &mut rng);
                let builder = TreeBuilder {
                    features,
                    grad: &grad,
                    dim,
                    max_features,
                    learning_rate: config.learning_rate,
                };
                let tree = builder.build(rows, 0, &mut rng);
                for (fi, x) in f.iter_mut().zip(features) {
                    *fi += tree.predict(x);
                }
                trees.push(tree);
            }
            trees
        })
        .collect();

    Ok(BoostedModel {
        version: MODEL_FORMAT_VERSION,
        classes,
        dim,
        learning_rate: config.learning_rate,
        ensembles,
    })
}

fn stratified_subsample(by_class: &[Vec<usize>], fraction: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut rows = Vec::new();
    for members in by_class {
        let take = ((members.len() as f64 * fraction).ceil() as usize).clamp(1, members.len());
        rows.extend(sample(rng, members.len(), take).into_iter().map(|k| members[k]));
    }
    rows.sort_unstable();
    rows
}

struct TreeBuilder<'a> {
    features: &'a [Vec<f64>],
    grad: &'a [f64],
    dim: usize,
    max_features: usize,
    learning_rate: f64,
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl TreeBuilder<'_> {
    fn build(&self, rows: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> TreeNode {
        if depth < MAX_DEPTH && rows.len() >= 2 && self.dim > 0 {
            if let Some(split) = self.best_split(&rows, rng) {
                let (left, right): (Vec<usize>, Vec<usize>) = rows
                    .iter()
                    .partition(|&&i| self.features[i][split.feature] <= split.threshold);
                return TreeNode::Split {
                    feature: split.feature,
                    threshold: split.threshold,
                    left: Box::new(self.build(left, depth + 1, rng)),
                    right: Box::new(self.build(right, depth + 1, rng)),
                };
            }
        }
        self.leaf(&rows)
    }

    /// One Newton step for the binomial deviance.
    fn leaf(&self, rows: &[usize]) -> TreeNode {
        let (num, den) = rows.iter().fold((0.0, 0.0), |(n, d), &i| {
            let g = self.grad[i];
            (n + g, d + g.abs() * (2.0 - g.abs()))
        });
        let value = if den > 1e-12 { num / den } else { 0.0 };
        TreeNode::Leaf {
            value: self.learning_rate * value,
        }
    }

    fn best_split(&self, rows: &[usize], rng: &mut ChaCha8Rng) -> Option<SplitChoice> {
        let mut candidates = sample(rng, self.dim, self.max_features).into_vec();
        candidates.sort_unstable();

        let n = rows.len() as f64;
        let total: f64 = rows.iter().map(|&i| self.grad[i]).sum();
        let base = total * total / n;
        let mut best: Option<SplitChoice> = None;
        let mut column: Vec<(f64, f64)> = Vec::with_capacity(rows.len());
        for feature in candidates {
            column.clear();
            column.extend(rows.iter().map(|&i| (self.features[i][feature], self.grad[i])));
            column.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_sum = 0.0;
            for k in 0..column.len() - 1 {
                left_sum += column[k].1;
                let (lo, hi) = (column[k].0, column[k + 1].0);
                if lo == hi {
                    continue;
                }
                let nl = (k + 1) as f64;
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / nl + right_sum * right_sum / (n - nl) - base;
                if gain > 1e-12 && best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mut threshold = lo + (hi - lo) / 2.0;
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some(SplitChoice {
                        feature,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best
    }
}

fn mean_and_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Crossing of two Gaussian densities with equal priors, i.e. the minimum
/// Bayes-error threshold between them.
///
/// Solves `log N(x; mu_pos, sd_pos) = log N(x; mu_neg, sd_neg)` and picks the
/// root inside `[min(mu), max(mu)]`. Equal spreads give the midpoint, equal
/// means give `mu_pos`, a zero spread falls back to the midpoint.
pub fn gaussian_crossing(mu_pos: f64, sd_pos: f64, mu_neg: f64, sd_neg: f64) -> f64 {
    let mid = 0.5 * (mu_pos + mu_neg);
    if mu_pos == mu_neg {
        return mu_pos;
    }
    if sd_pos <= 0.0 || sd_neg <= 0.0 || sd_pos == sd_neg {
        return mid;
    }
    let (vp, vn) = (sd_pos * sd_pos, sd_neg * sd_neg);
    let a = vp - vn;
    let b = 2.0 * (vn * mu_pos - vp * mu_neg);
    let c = vp * mu_neg * mu_neg - vn * mu_pos * mu_pos + 2.0 * vp * vn * (sd_neg / sd_pos).ln();
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return mid;
    }
    // numerically stable pair of roots
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let roots = [q / a, c / q];
    let (lo, hi) = (mu_pos.min(mu_neg), mu_pos.max(mu_neg));
    let outside = |x: f64| (lo - x).max(x - hi).max(0.0);
    roots
        .into_iter()
        .filter(|x| x.is_finite())
        .min_by(|x, y| {
            outside(*x)
                .total_cmp(&outside(*y))
                .then((x - mid).abs().total_cmp(&(y - mid).abs()))
        })
        .unwrap_or(mid)
}

/// Fits a Gaussian to each score population and returns their crossing.
pub fn adaptive_threshold(pos_scores: &[f64], neg_scores: &[f64]) -> Result<f64> {
    adaptive_threshold_with_floor(pos_scores, neg_scores, 0.0)
}

/// Smallest fitted spread used by [`fit_thresholds`], as a fraction of the
/// distance between the two means. Boosted training margins saturate, so one
/// population often collapses to a near-constant score and would pull the
/// crossing onto its own mean.
pub const SPREAD_FLOOR: f64 = 0.1;

/// [`adaptive_threshold`] with both spreads raised to at least
/// `floor * |mu_pos - mu_neg|`.
pub fn adaptive_threshold_with_floor(pos_scores: &[f64], neg_scores: &[f64], floor: f64) -> Result<f64> {
    if pos_scores.len() < 2 || neg_scores.len() < 2 {
        return Err(Error::invalid("adaptive thresholding needs >= 2 scores per class"));
    }
    let (mp, sp) = mean_and_sd(pos_scores);
    let (mn, sn) = mean_and_sd(neg_scores);
    let min_sd = floor * (mp - mn).abs();
    Ok(gaussian_crossing(mp, sp.max(min_sd), mn, sn.max(min_sd)))
}

/// Thresholds for a trained model: adaptive on the training margins in the
/// binary case, all zero otherwise.
pub fn fit_thresholds(model: &BoostedModel, features: &[Vec<f64>], labels: &[usize]) -> Result<ThresholdVector> {
    if model.classes != 2 {
        return Ok(ThresholdVector::zeros(model.classes));
    }
    let scores = model.scores_batch(features)?;
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for (s, &y) in scores.iter().zip(labels) {
        if y == 1 {
            pos.push(s.binary_margin());
        } else {
            neg.push(s.binary_margin());
        }
    }
    if pos.len() < 2 || neg.len() < 2 {
        return Ok(ThresholdVector::zeros(2));
    }
    Ok(ThresholdVector::binary(adaptive_threshold_with_floor(&pos, &neg, SPREAD_FLOOR)?))
}
