//! Supervoxel neighbourhood graph and random-walk propagation of class
//! probabilities, from which the geometric uncertainty is derived.
//!
//! Every node draws its next distribution from its `k` nearest neighbours,
//! weighted by inverse center distance and normalized so that the incoming
//! weights of each node sum to one. Rows therefore stay distributions.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::uncertainty::{ClassProbabilities, UncertaintyMeasure};

/// Guard against coincident centers, in voxel units.
pub const DISTANCE_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    /// `incoming[i]` lists `(j, p_T)` for every neighbour `j` of `i`; weights sum to 1.
    incoming: Vec<Vec<(usize, f64)>>,
}

impl NeighborGraph {
    /// Builds a graph from raw positive weights, normalizing each node's incoming edges.
    pub fn from_weighted_edges(raw: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let n = raw.len();
        let incoming = raw
            .into_iter()
            .enumerate()
            .map(|(i, edges)| {
                if edges.is_empty() {
                    return Err(Error::invalid(format!("node {i} has no neighbours")));
                }
                if let Some(&(j, w)) = edges.iter().find(|&&(j, w)| j >= n || j == i || !(w > 0.0)) {
                    return Err(Error::invalid(format!("invalid edge {j} -> {i} with weight {w}")));
                }
                let total: f64 = edges.iter().map(|e| e.1).sum();
                Ok(edges.into_iter().map(|(j, w)| (j, w / total)).collect())
            })
            .collect::<Result<_>>()?;
        Ok(Self { incoming })
    }

    pub fn len(&self) -> usize {
        self.incoming.len()
    }

    pub fn is_empty(&self) -> bool {
        self.incoming.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.incoming[i]
    }

    /// Dense row-stochastic transition matrix, `T[i][j] = p_T` of edge `j -> i`.
    pub fn dense_transition(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        self.incoming
            .iter()
            .map(|edges| {
                let mut row = vec![0.0; n];
                for &(j, w) in edges {
                    row[j] += w;
                }
                row
            })
            .collect()
    }
}

/// k-nearest-neighbour graph over supervoxel centers with inverse-distance
/// weights. Distance ties at the cutoff go to the lower id.
pub fn build_graph(centers: &[[f64; 3]], k: usize) -> Result<NeighborGraph> {
    let n = centers.len();
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    if n <= k {
        return Err(Error::invalid(format!("need more than k={k} supervoxels, have {n}")));
    }
    let raw: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let ci = centers[i];
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let cj = centers[j];
                    let d2 = (ci[0] - cj[0]).powi(2) + (ci[1] - cj[1]).powi(2) + (ci[2] - cj[2]).powi(2);
                    (d2, j)
                })
                .collect();
            let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            cand.select_nth_unstable_by(k - 1, by_dist);
            cand.truncate(k);
            cand.sort_unstable_by(by_dist);
            cand.into_iter()
                .map(|(d2, j)| (j, 1.0 / d2.sqrt().max(DISTANCE_EPSILON)))
                .collect()
        })
        .collect();
    NeighborGraph::from_weighted_edges(raw)
}

/// One class distribution per node, plus the number of propagation steps applied.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityField {
    classes: usize,
    data: Vec<f64>,
    pub iteration: usize,
}

impl ProbabilityField {
    pub fn new(rows: Vec<ClassProbabilities>) -> Result<Self> {
        let classes = rows.first().map_or(0, ClassProbabilities::len);
        if let Some(r) = rows.iter().find(|r| r.len() != classes) {
            return Err(Error::DimensionMismatch {
                expected: classes,
                got: r.len(),
            });
        }
        let data = rows.into_iter().flat_map(ClassProbabilities::into_vec).collect();
        Ok(Self {
            classes,
            data,
            iteration: 0,
        })
    }

    /// From a flat row-major buffer.
    pub fn from_flat(classes: usize, data: Vec<f64>) -> Result<Self> {
        if classes == 0 || data.len() % classes != 0 {
            return Err(Error::invalid("flat buffer is not a whole number of rows"));
        }
        Ok(Self {
            classes,
            data,
            iteration: 0,
        })
    }

    pub fn len(&self) -> usize {
        if self.classes == 0 {
            0
        } else {
            self.data.len() / self.classes
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.classes..(i + 1) * self.classes]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.classes)
    }
}

/// Applies `p(i) <- sum_j p_T(j -> i) p(j)` exactly `steps` times.
pub fn propagate(graph: &NeighborGraph, p0: &ProbabilityField, steps: usize) -> Result<ProbabilityField> {
    if graph.len() != p0.len() {
        return Err(Error::DimensionMismatch {
            expected: graph.len(),
            got: p0.len(),
        });
    }
    let c = p0.classes;
    let mut cur = p0.data.clone();
    let mut next = vec![0.0; cur.len()];
    for _ in 0..steps {
        next.par_chunks_mut(c).enumerate().for_each(|(i, out)| {
            out.fill(0.0);
            for &(j, w) in &graph.incoming[i] {
                for (o, &v) in out.iter_mut().zip(&cur[j * c..(j + 1) * c]) {
                    *o += w * v;
                }
            }
        });
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(ProbabilityField {
        classes: c,
        data: cur,
        iteration: p0.iteration + steps,
    })
}

/// Nonnegative per-supervoxel uncertainty scores.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyField(Vec<f64>);

impl UncertaintyField {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid(format!("uncertainty must be finite and >= 0, got {v}")));
        }
        Ok(Self(values))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
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
}

/// Entropy of each row of a probability field.
pub fn entropy_field(field: &ProbabilityField, measure: UncertaintyMeasure) -> Result<UncertaintyField> {
    if !measure.is_entropy() {
        return Err(Error::NotCombinable(measure.name()));
    }
    // clamp away -0.0 and rounding below zero
    Ok(UncertaintyField(field.rows().map(|r| measure.raw(r).max(0.0)).collect()))
}

/// Geometric entropy of the propagated field.
pub fn geometric_uncertainty(field: &ProbabilityField, measure: UncertaintyMeasure) -> Result<UncertaintyField> {
    entropy_field(field, measure)
}

/// Sum of feature and geometric entropy, the upper bound of their joint entropy.
pub fn combined_uncertainty(feature: &UncertaintyField, geometric: &UncertaintyField) -> Result<UncertaintyField> {
    if feature.len() != geometric.len() {
        return Err(Error::DimensionMismatch {
            expected: feature.len(),
            got: geometric.len(),
        });
    }
    Ok(UncertaintyField(
        feature.0.iter().zip(&geometric.0).map(|(a, b)| a + b).collect(),
    ))
}
