//! Uncertainty measures over a predicted class distribution.
//!
//! All entropies are in bits, so binary maxima equal 1. Whenever the top
//! classes tie, the lower class index ranks first.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A probability distribution over the label set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassProbabilities(Vec<f64>);

impl ClassProbabilities {
    /// Validates entries in `[0, 1]` summing to one within `1e-9`.
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.len() < 2 {
            return Err(Error::invalid("a class distribution needs at least two entries"));
        }
        if p.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::invalid(format!("probabilities out of [0,1]: {p:?}")));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("probabilities sum to {sum}")));
        }
        Ok(Self(p))
    }

    /// Trusted constructor for distributions produced internally.
    pub(crate) fn from_vec_unchecked(p: Vec<f64>) -> Self {
        Self(p)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Most probable class.
    pub fn argmax(&self) -> usize {
        top_two(&self.0).0
    }
}

impl AsRef<[f64]> for ClassProbabilities {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Indices of the largest and second largest entries, lower index first on ties.
pub fn top_two(p: &[f64]) -> (usize, usize) {
    debug_assert!(p.len() >= 2);
    let (mut b1, mut b2) = if p[1] > p[0] { (1, 0) } else { (0, 1) };
    for (i, &v) in p.iter().enumerate().skip(2) {
        if v > p[b1] {
            b2 = b1;
            b1 = i;
        } else if v > p[b2] {
            b2 = i;
        }
    }
    (b1, b2)
}

#[inline]
fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.log2()
    } else {
        0.0
    }
}

/// Entropy of the two-outcome distribution `(q, 1 - q)`.
#[inline]
pub fn binary_entropy(q: f64) -> f64 {
    -(plogp(q) + plogp(1.0 - q))
}

/// Shannon entropy of the whole distribution.
pub fn total_entropy(p: &[f64]) -> f64 {
    -p.iter().map(|&v| plogp(v)).sum::<f64>()
}

/// The top class against all others taken together.
pub fn selection_entropy(p: &[f64]) -> f64 {
    let (b1, _) = top_two(p);
    let rest: f64 = p
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != b1)
        .map(|(_, &v)| v)
        .sum();
    -(plogp(p[b1]) + plogp(rest))
}

/// Entropy of the top two classes, renormalized to sum to one.
pub fn conditional_entropy(p: &[f64]) -> f64 {
    let (b1, b2) = top_two(p);
    let z = p[b1] + p[b2];
    if z <= 0.0 {
        return 0.0;
    }
    binary_entropy(p[b1] / z)
}

/// Probability of the predicted class; lower means more uncertain.
pub fn min_max_score(p: &[f64]) -> f64 {
    p[top_two(p).0]
}

/// Gap between the two most probable classes; lower means more uncertain.
pub fn min_margin_score(p: &[f64]) -> f64 {
    let (b1, b2) = top_two(p);
    p[b1] - p[b2]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UncertaintyMeasure {
    TotalEntropy,
    SelectionEntropy,
    ConditionalEntropy,
    MinMax,
    MinMargin,
}

impl UncertaintyMeasure {
    pub const ALL: [UncertaintyMeasure; 5] = [
        UncertaintyMeasure::TotalEntropy,
        UncertaintyMeasure::SelectionEntropy,
        UncertaintyMeasure::ConditionalEntropy,
        UncertaintyMeasure::MinMax,
        UncertaintyMeasure::MinMargin,
    ];

    /// Only the entropies can be summed with a geometric entropy.
    pub fn is_entropy(self) -> bool {
        matches!(
            self,
            UncertaintyMeasure::TotalEntropy
                | UncertaintyMeasure::SelectionEntropy
                | UncertaintyMeasure::ConditionalEntropy
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            UncertaintyMeasure::TotalEntropy => "total-entropy",
            UncertaintyMeasure::SelectionEntropy => "selection-entropy",
            UncertaintyMeasure::ConditionalEntropy => "conditional-entropy",
            UncertaintyMeasure::MinMax => "min-max",
            UncertaintyMeasure::MinMargin => "min-margin",
        }
    }

    /// Raw value of the measure: entropy in bits, or the min-max / min-margin score.
    pub fn raw(self, p: &[f64]) -> f64 {
        match self {
            UncertaintyMeasure::TotalEntropy => total_entropy(p),
            UncertaintyMeasure::SelectionEntropy => selection_entropy(p),
            UncertaintyMeasure::ConditionalEntropy => conditional_entropy(p),
            UncertaintyMeasure::MinMax => min_max_score(p),
            UncertaintyMeasure::MinMargin => min_margin_score(p),
        }
    }

    /// Selection score where larger always means more uncertain: the entropy
    /// itself, or the negated min-max / min-margin score.
    pub fn selection_score(self, p: &[f64]) -> f64 {
        match self {
            UncertaintyMeasure::MinMax | UncertaintyMeasure::MinMargin => -self.raw(p),
            _ => self.raw(p),
        }
    }
}

impl fmt::Display for UncertaintyMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for UncertaintyMeasure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown uncertainty measure {s:?}")))
    }
}

/// Index of the largest score, lowest index on ties. `None` for empty input.
pub fn argmax_lowest(scores: impl IntoIterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in scores.into_iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}
