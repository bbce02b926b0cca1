//! Active-learning loop: strategy catalog, simulated oracle, input-budget
//! accounting, segmentation metrics and learning-curve aggregation.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{fit_thresholds, scores_to_probs, train, BoostConfig, BoostedModel, ThresholdVector};
use crate::geomgraph::{
    build_graph, combined_uncertainty, entropy_field, geometric_uncertainty, propagate, NeighborGraph,
    ProbabilityField, UncertaintyField,
};
use crate::planefinder::{patch_members, plane_normal, select_best_patch_among, Plane};
use crate::uncertainty::{ClassProbabilities, UncertaintyMeasure};
use crate::volume::Dataset;
use crate::{Error, Result};

/// How the next center is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scoring {
    Random,
    Feature(UncertaintyMeasure),
    Combined(UncertaintyMeasure),
    /// Most confidently misclassified sample (needs ground truth).
    MaxError,
    /// Random sample whose graph neighbours disagree in predicted class.
    Boundary,
}

/// What is queried around the selected center.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Selection {
    Single,
    /// Random plane through the selected center (`p` prefix).
    RandomPlane,
    /// Best patch over the top candidates (`p*` prefix).
    OptimalPlane,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Strategy {
    pub scoring: Scoring,
    pub selection: Selection,
}

const BASE_NAMES: [(&str, Scoring); 11] = [
    ("Rand", Scoring::Random),
    ("FEnt", Scoring::Feature(UncertaintyMeasure::TotalEntropy)),
    ("FEntS", Scoring::Feature(UncertaintyMeasure::SelectionEntropy)),
    ("FEntC", Scoring::Feature(UncertaintyMeasure::ConditionalEntropy)),
    ("FMnMx", Scoring::Feature(UncertaintyMeasure::MinMax)),
    ("FMnMar", Scoring::Feature(UncertaintyMeasure::MinMargin)),
    ("CEnt", Scoring::Combined(UncertaintyMeasure::TotalEntropy)),
    ("CEntS", Scoring::Combined(UncertaintyMeasure::SelectionEntropy)),
    ("CEntC", Scoring::Combined(UncertaintyMeasure::ConditionalEntropy)),
    ("MaxError", Scoring::MaxError),
    ("Boundary", Scoring::Boundary),
];

impl Strategy {
    pub const fn single(scoring: Scoring) -> Self {
        Self {
            scoring,
            selection: Selection::Single,
        }
    }

    fn base_name(&self) -> &'static str {
        BASE_NAMES
            .iter()
            .find(|(_, s)| *s == self.scoring)
            .map(|(n, _)| *n)
            .expect("every scoring has a name")
    }

    /// Entropy measure driving the patch search, if any.
    fn entropy_measure(&self) -> Option<UncertaintyMeasure> {
        match self.scoring {
            Scoring::Feature(m) | Scoring::Combined(m) if m.is_entropy() => Some(m),
            _ => None,
        }
    }

    pub fn needs_geometry(&self) -> bool {
        matches!(self.scoring, Scoring::Combined(_) | Scoring::Boundary) || self.selection != Selection::Single
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prefix = match self.selection {
            Selection::Single => "",
            Selection::RandomPlane => "p",
            Selection::OptimalPlane => "p*",
        };
        write!(f, "{prefix}{}", self.base_name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::UnknownStrategy(s.to_string());
        let (selection, base) = if let Some(rest) = s.strip_prefix("p*") {
            (Selection::OptimalPlane, rest)
        } else if let Some(rest) = s.strip_prefix('p') {
            (Selection::RandomPlane, rest)
        } else {
            (Selection::Single, s)
        };
        let scoring = BASE_NAMES
            .iter()
            .find(|(n, _)| *n == base)
            .map(|(_, sc)| *sc)
            .ok_or_else(unknown)?;
        let strategy = Strategy { scoring, selection };
        let allowed = match selection {
            Selection::Single => true,
            Selection::RandomPlane => !matches!(scoring, Scoring::MaxError | Scoring::Boundary),
            Selection::OptimalPlane => strategy.entropy_measure().is_some(),
        };
        if allowed {
            Ok(strategy)
        } else {
            Err(unknown())
        }
    }
}

impl TryFrom<String> for Strategy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Strategy> for String {
    fn from(s: Strategy) -> String {
        s.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    Iou,
    Dice,
    AvgPrecision,
    Accuracy,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Iou => "iou",
            MetricKind::Dice => "dice",
            MetricKind::AvgPrecision => "avg-precision",
            MetricKind::Accuracy => "accuracy",
        }
    }

    /// IoU for binary images, average precision for multi-class images,
    /// accuracy for feature-only data.
    pub fn default_for(dataset: &Dataset) -> Self {
        if !dataset.has_geometry() {
            MetricKind::Accuracy
        } else if dataset.num_classes() == 2 {
            MetricKind::Iou
        } else {
            MetricKind::AvgPrecision
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [MetricKind::Iou, MetricKind::Dice, MetricKind::AvgPrecision, MetricKind::Accuracy]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown metric {s:?}")))
    }
}

/// Scores a prediction against the truth. IoU and Dice treat every class
/// other than 0 as foreground; both are 1 when prediction and truth have no
/// foreground at all.
pub fn metric(pred: &[usize], truth: &[usize], kind: MetricKind, classes: usize) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::invalid("metric of an empty prediction"));
    }
    if let Some(&class) = pred.iter().chain(truth).find(|&&c| c >= classes) {
        return Err(Error::ClassOutOfRange { class, classes });
    }
    let pairs = || pred.iter().zip(truth);
    Ok(match kind {
        MetricKind::Iou | MetricKind::Dice => {
            let inter = pairs().filter(|(&p, &t)| p != 0 && t != 0).count() as f64;
            let p = pred.iter().filter(|&&c| c != 0).count() as f64;
            let t = truth.iter().filter(|&&c| c != 0).count() as f64;
            if p + t == 0.0 {
                1.0
            } else if kind == MetricKind::Iou {
                inter / (p + t - inter)
            } else {
                2.0 * inter / (p + t)
            }
        }
        MetricKind::AvgPrecision => {
            let mut predicted = vec![0usize; classes];
            let mut correct = vec![0usize; classes];
            for (&p, &t) in pairs() {
                predicted[p] += 1;
                correct[p] += usize::from(p == t);
            }
            let sum: f64 = (0..classes)
                .filter(|&c| predicted[c] > 0)
                .map(|c| correct[c] as f64 / predicted[c] as f64)
                .sum();
            sum / classes as f64
        }
        MetricKind::Accuracy => pairs().filter(|(p, t)| p == t).count() as f64 / pred.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    /// Neighbours per node in the geometric graph.
    pub neighbors: usize,
    /// Propagation steps; 20 for binary and 10 for multi-class when unset.
    pub steps: Option<usize>,
    /// Patch radius in voxels.
    pub radius: f64,
    /// Number of most uncertain centers searched for the best patch.
    pub top_t: usize,
    pub seeds_per_class: usize,
    /// Input budget; 100 for binary and 200 for multi-class when unset.
    pub budget: Option<usize>,
    pub metric: Option<MetricKind>,
    pub boost: BoostConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            neighbors: 10,
            steps: None,
            radius: 12.0,
            top_t: 5,
            seeds_per_class: 5,
            budget: None,
            metric: None,
            boost: BoostConfig::default(),
        }
    }
}

impl EngineConfig {
    pub fn budget_for(&self, classes: usize) -> usize {
        self.budget.unwrap_or(if classes == 2 { 100 } else { 200 })
    }

    pub fn steps_for(&self, classes: usize) -> usize {
        self.steps.unwrap_or(if classes == 2 { 20 } else { 10 })
    }

    fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::invalid(format!("radius must be positive, got {}", self.radius)));
        }
        if self.top_t == 0 {
            return Err(Error::invalid("top_t must be >= 1"));
        }
        if self.seeds_per_class == 0 {
            return Err(Error::invalid("seeds_per_class must be >= 1"));
        }
        if self.neighbors == 0 {
            return Err(Error::invalid("neighbors must be >= 1"));
        }
        Ok(())
    }
}

/// A dataset split into an active-learning pool and a held-out test half,
/// with the neighbour graph over the pool.
#[derive(Debug, Clone)]
pub struct PreparedDataset {
    dataset: Dataset,
    pool: Vec<usize>,
    test: Vec<usize>,
    local: Vec<Option<usize>>,
    pool_centers: Vec<[f64; 3]>,
    pool_features: Vec<Vec<f64>>,
    test_features: Vec<Vec<f64>>,
    graph: Option<NeighborGraph>,
}

impl PreparedDataset {
    /// Image datasets are split spatially (centers left of the middle of the
    /// x axis form the pool); feature-only datasets are split at random.
    pub fn new(dataset: Dataset, neighbors: usize, split_seed: u64) -> Result<Self> {
        if dataset.len() < 2 {
            return Err(Error::invalid("need at least two samples to split into pool and test"));
        }
        let (pool, test): (Vec<usize>, Vec<usize>) = match &dataset.volume {
            Some(v) => {
                let half = v.dims()[0] as f64 / 2.0;
                let (mut pool, mut test) = (Vec::new(), Vec::new());
                for (i, sv) in dataset.supervoxels.iter().enumerate() {
                    if sv.center[0] < half - 0.5 {
                        pool.push(i);
                    } else {
                        test.push(i);
                    }
                }
                (pool, test)
            }
            None => {
                let mut ids: Vec<usize> = (0..dataset.len()).collect();
                ids.shuffle(&mut ChaCha8Rng::seed_from_u64(split_seed));
                let test = ids.split_off(dataset.len().div_ceil(2));
                (ids, test)
            }
        };
        Self::from_split(dataset, pool, test, neighbors)
    }

    pub fn from_split(dataset: Dataset, mut pool: Vec<usize>, mut test: Vec<usize>, neighbors: usize) -> Result<Self> {
        pool.sort_unstable();
        test.sort_unstable();
        if pool.is_empty() {
            return Err(Error::EmptyPool);
        }
        if test.is_empty() {
            return Err(Error::invalid("empty test split"));
        }
        let mut local = vec![None; dataset.len()];
        for (l, &g) in pool.iter().enumerate() {
            let slot = local
                .get_mut(g)
                .ok_or_else(|| Error::invalid(format!("pool id {g} out of range")))?;
            if slot.is_some() {
                return Err(Error::invalid(format!("pool id {g} listed twice")));
            }
            *slot = Some(l);
        }
        if let Some(&g) = test.iter().find(|&&g| g >= dataset.len() || local[g].is_some()) {
            return Err(Error::invalid(format!("test id {g} out of range or also in the pool")));
        }
        let pool_centers: Vec<[f64; 3]> = pool.iter().map(|&g| dataset.supervoxels[g].center).collect();
        let graph = if dataset.has_geometry() && pool.len() > 1 {
            Some(build_graph(&pool_centers, neighbors.min(pool.len() - 1))?)
        } else {
            None
        };
        let features = |ids: &[usize]| ids.iter().map(|&g| dataset.supervoxels[g].features.clone()).collect();
        Ok(Self {
            pool_features: features(&pool),
            test_features: features(&test),
            dataset,
            pool,
            test,
            local,
            pool_centers,
            graph,
        })
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    /// Global ids of the pool, ascending.
    pub fn pool(&self) -> &[usize] {
        &self.pool
    }

    pub fn test(&self) -> &[usize] {
        &self.test
    }

    /// Position of a global id within the pool.
    pub fn local(&self, global: usize) -> Option<usize> {
        self.local.get(global).copied().flatten()
    }

    pub fn pool_centers(&self) -> &[[f64; 3]] {
        &self.pool_centers
    }

    /// Neighbour graph over pool positions.
    pub fn graph(&self) -> Option<&NeighborGraph> {
        self.graph.as_ref()
    }
}

/// A question for the oracle. Ids are global supervoxel ids.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Query {
    Single {
        id: usize,
    },
    Patch {
        center: usize,
        /// `None` for superpixel neighbourhoods on planar images.
        plane: Option<Plane>,
        /// Unlabeled patch members, ascending.
        members: Vec<usize>,
        /// Summed uncertainty of the patch for optimal-plane queries.
        uncertainty: Option<f64>,
    },
}

impl Query {
    pub fn center(&self) -> usize {
        match self {
            Query::Single { id } => *id,
            Query::Patch { center, .. } => *center,
        }
    }

    pub fn members(&self) -> &[usize] {
        match self {
            Query::Single { id } => std::slice::from_ref(id),
            Query::Patch { members, .. } => members,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OracleAnswer {
    /// `(global id, class)` pairs.
    pub labels: Vec<(usize, usize)>,
    pub cost: usize,
}

/// Inputs needed to label a patch whose members span `classes` classes:
/// one line for two regions, a correction pass otherwise.
pub fn patch_cost(classes: usize) -> usize {
    if classes <= 2 {
        2
    } else {
        3
    }
}

/// Labels every query member with its ground truth.
pub fn oracle_answer(query: &Query, ground_truth: &[usize]) -> Result<OracleAnswer> {
    let labels = query
        .members()
        .iter()
        .map(|&g| {
            ground_truth
                .get(g)
                .map(|&c| (g, c))
                .ok_or_else(|| Error::invalid(format!("query member {g} has no ground truth")))
        })
        .collect::<Result<Vec<_>>>()?;
    let cost = match query {
        Query::Single { .. } => 1,
        Query::Patch { .. } => {
            let mut classes: Vec<usize> = labels.iter().map(|&(_, c)| c).collect();
            classes.sort_unstable();
            classes.dedup();
            patch_cost(classes.len())
        }
    };
    Ok(OracleAnswer { labels, cost })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub inputs: usize,
    pub value: f64,
}

struct ModelState {
    pool_probs: Vec<ClassProbabilities>,
    predicted: Vec<usize>,
}

const SEED_STREAM: u64 = 1;
const QUERY_STREAM: u64 = 2;
const MODEL_STREAM: u64 = 3;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a stream seed from a tuple of integers.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5EED, |h, &p| splitmix(h ^ p))
}

/// One active-learning run over a prepared dataset.
pub struct ALSession {
    prepared: Arc<PreparedDataset>,
    strategy: Strategy,
    config: EngineConfig,
    budget: usize,
    steps: usize,
    metric: MetricKind,
    seed: u64,
    repeat: u64,
    labels: Vec<Option<usize>>,
    labeled: usize,
    inputs_spent: usize,
    iteration: u64,
    rng: ChaCha8Rng,
    state: Option<ModelState>,
    curve: Vec<CurvePoint>,
}

impl ALSession {
    pub fn new(
        prepared: Arc<PreparedDataset>,
        strategy: Strategy,
        config: EngineConfig,
        seed: u64,
        repeat: u64,
    ) -> Result<Self> {
        config.validate()?;
        let ds = prepared.dataset();
        let unsupported = |requirement| Error::UnsupportedStrategy {
            strategy: strategy.to_string(),
            requirement,
        };
        if strategy.needs_geometry() && !ds.has_geometry() {
            return Err(unsupported("an image dataset"));
        }
        if strategy.selection == Selection::OptimalPlane && ds.is_planar() {
            return Err(unsupported("a 3-D volume"));
        }
        if matches!(strategy.scoring, Scoring::Combined(_) | Scoring::Boundary) && prepared.graph().is_none() {
            return Err(unsupported("a pool of at least two supervoxels"));
        }
        let classes = ds.num_classes();
        let metric = config.metric.unwrap_or_else(|| MetricKind::default_for(ds));
        Ok(Self {
            labels: vec![None; prepared.pool().len()],
            budget: config.budget_for(classes),
            steps: config.steps_for(classes),
            metric,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(&[seed, repeat, QUERY_STREAM])),
            prepared,
            strategy,
            config,
            seed,
            repeat,
            labeled: 0,
            inputs_spent: 0,
            iteration: 0,
            state: None,
            curve: Vec::new(),
        })
    }

    /// Labels `seeds_per_class` random pool members of every class from the
    /// ground truth. Seeding costs no inputs.
    pub fn seed_from_ground_truth(&mut self) -> Result<()> {
        let ds = self.prepared.dataset();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[self.seed, self.repeat, SEED_STREAM]));
        let mut picks = Vec::new();
        for class in 0..ds.num_classes() {
            let mut members: Vec<usize> = self
                .prepared
                .pool()
                .iter()
                .copied()
                .filter(|&g| ds.ground_truth[g] == class)
                .collect();
            if members.len() < self.config.seeds_per_class {
                return Err(Error::invalid(format!(
                    "class {class} has {} pool samples, {} needed for seeding",
                    members.len(),
                    self.config.seeds_per_class
                )));
            }
            let (chosen, _) = members.partial_shuffle(&mut rng, self.config.seeds_per_class);
            picks.extend(chosen.iter().map(|&g| (g, class)));
        }
        self.seed_with(&picks)
    }

    /// Adds free labels (no input cost), e.g. an initial annotation.
    pub fn seed_with(&mut self, labels: &[(usize, usize)]) -> Result<()> {
        self.set_labels(labels).map(|_| ())
    }

    fn set_labels(&mut self, labels: &[(usize, usize)]) -> Result<usize> {
        let classes = self.prepared.dataset().num_classes();
        let mut resolved = Vec::with_capacity(labels.len());
        for &(g, class) in labels {
            let l = self
                .prepared
                .local(g)
                .ok_or_else(|| Error::invalid(format!("supervoxel {g} is not in the pool")))?;
            if class >= classes {
                return Err(Error::ClassOutOfRange { class, classes });
            }
            resolved.push((l, class));
        }
        let mut added = 0;
        for (l, class) in resolved {
            if self.labels[l].replace(class).is_none() {
                added += 1;
            }
        }
        self.labeled += added;
        Ok(added)
    }

    /// Records an oracle answer. Labels are last-write-wins; returns the
    /// number of newly labeled supervoxels.
    pub fn apply(&mut self, labels: &[(usize, usize)], cost: usize) -> Result<usize> {
        if self.inputs_spent + cost > self.budget {
            return Err(Error::invalid(format!(
                "answer costs {cost} inputs but only {} remain",
                self.remaining()
            )));
        }
        let added = self.set_labels(labels)?;
        self.inputs_spent += cost;
        Ok(added)
    }

    /// Retrains from scratch on the labeled pool, then records the test
    /// metric at the current input count.
    pub fn retrain(&mut self) -> Result<f64> {
        let ds = self.prepared.dataset();
        let classes = ds.num_classes();
        let (features, labels): (Vec<Vec<f64>>, Vec<usize>) = self
            .labels
            .iter()
            .enumerate()
            .filter_map(|(l, c)| c.map(|c| (self.prepared.pool_features[l].clone(), c)))
            .unzip();
        let boost = BoostConfig {
            seed: derive_seed(&[self.seed, self.repeat, self.iteration, MODEL_STREAM, self.config.boost.seed]),
            ..self.config.boost
        };
        let model = train(&features, &labels, classes, &boost)?;
        let thresholds = fit_thresholds(&model, &features, &labels)?;
        self.iteration += 1;

        let pool_probs = probabilities(&model, &thresholds, &self.prepared.pool_features)?;
        let predicted = pool_probs.iter().map(|p| p.argmax()).collect();
        let test_pred: Vec<usize> = probabilities(&model, &thresholds, &self.prepared.test_features)?
            .iter()
            .map(|p| p.argmax())
            .collect();
        let truth: Vec<usize> = self.prepared.test().iter().map(|&g| ds.ground_truth[g]).collect();
        let value = metric(&test_pred, &truth, self.metric, classes)?;
        self.curve.push(CurvePoint {
            inputs: self.inputs_spent,
            value,
        });
        self.state = Some(ModelState { pool_probs, predicted });
        Ok(value)
    }

    /// Chooses the next query from the unlabeled pool; `None` once the pool
    /// is exhausted.
    pub fn next_query(&mut self) -> Result<Option<Query>> {
        if self.state.is_none() {
            return Err(Error::invalid("model not trained"));
        }
        let unlabeled: Vec<usize> = (0..self.labels.len()).filter(|&l| self.labels[l].is_none()).collect();
        if unlabeled.is_empty() {
            return Ok(None);
        }
        let query = match self.strategy.selection {
            Selection::Single => {
                let center = self.pick_center(&unlabeled)?;
                Query::Single {
                    id: self.prepared.pool()[center],
                }
            }
            Selection::RandomPlane => {
                let center = self.pick_center(&unlabeled)?;
                if self.prepared.dataset().is_planar() {
                    self.neighbourhood_patch(center, &unlabeled)
                } else {
                    self.random_plane_patch(center)?
                }
            }
            Selection::OptimalPlane => self.optimal_patch(&unlabeled)?,
        };
        Ok(Some(query))
    }

    fn state(&self) -> &ModelState {
        self.state.as_ref().expect("checked by next_query")
    }

    /// Selection scores over the pool, larger meaning more uncertain.
    fn pool_scores(&self, measure: UncertaintyMeasure, combined: bool) -> Result<Vec<f64>> {
        let probs = &self.state().pool_probs;
        if !combined {
            return Ok(probs.iter().map(|p| measure.selection_score(p.as_slice())).collect());
        }
        let u = self.combined_field(measure)?;
        Ok(u.into_vec())
    }

    fn feature_field(&self, measure: UncertaintyMeasure) -> Result<UncertaintyField> {
        UncertaintyField::new(self.state().pool_probs.iter().map(|p| measure.raw(p.as_slice())).collect())
    }

    fn combined_field(&self, measure: UncertaintyMeasure) -> Result<UncertaintyField> {
        let graph = self.prepared.graph().expect("checked at construction");
        let field = ProbabilityField::new(self.state().pool_probs.clone())?;
        let walked = propagate(graph, &field, self.steps)?;
        let feature = entropy_field(&field, measure)?;
        combined_uncertainty(&feature, &geometric_uncertainty(&walked, measure)?)
    }

    fn pick_center(&mut self, unlabeled: &[usize]) -> Result<usize> {
        let pick = match self.strategy.scoring {
            Scoring::Random => None,
            Scoring::Feature(m) => Some(best_of(unlabeled, &self.pool_scores(m, false)?)),
            Scoring::Combined(m) => Some(best_of(unlabeled, &self.pool_scores(m, true)?)),
            Scoring::MaxError => {
                let ds = self.prepared.dataset();
                let state = self.state();
                let wrong: Vec<usize> = unlabeled
                    .iter()
                    .copied()
                    .filter(|&l| state.predicted[l] != ds.ground_truth[self.prepared.pool()[l]])
                    .collect();
                let confidence: Vec<f64> = state
                    .pool_probs
                    .iter()
                    .map(|p| p.as_slice()[p.argmax()])
                    .collect();
                (!wrong.is_empty()).then(|| best_of(&wrong, &confidence))
            }
            Scoring::Boundary => {
                let graph = self.prepared.graph().expect("checked at construction");
                let predicted = &self.state().predicted;
                let eligible: Vec<usize> = unlabeled
                    .iter()
                    .copied()
                    .filter(|&l| graph.neighbors(l).iter().any(|&(j, _)| predicted[j] != predicted[l]))
                    .collect();
                (!eligible.is_empty()).then(|| eligible[self.rng.random_range(0..eligible.len())])
            }
        };
        Ok(pick.unwrap_or_else(|| unlabeled[self.rng.random_range(0..unlabeled.len())]))
    }

    /// Center plus its nearest unlabeled pool neighbours (4 for binary, 7
    /// for multi-class).
    fn neighbourhood_patch(&self, center: usize, unlabeled: &[usize]) -> Query {
        let m = if self.prepared.dataset().num_classes() == 2 { 4 } else { 7 };
        let centers = self.prepared.pool_centers();
        let c = centers[center];
        let mut others: Vec<(f64, usize)> = unlabeled
            .iter()
            .filter(|&&l| l != center)
            .map(|&l| {
                let d2: f64 = (0..3).map(|a| (centers[l][a] - c[a]).powi(2)).sum();
                (d2, l)
            })
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let locals = std::iter::once(center).chain(others.into_iter().take(m).map(|(_, l)| l));
        self.patch_query(center, None, locals, None)
    }

    fn random_plane_patch(&mut self, center: usize) -> Result<Query> {
        let (phi, gamma) = loop {
            let phi = self.rng.random_range(0.0..std::f64::consts::PI);
            let gamma = self.rng.random_range(0.0..std::f64::consts::PI);
            if plane_normal(phi, gamma).is_ok() {
                break (phi, gamma);
            }
        };
        let centers = self.prepared.pool_centers();
        let plane = Plane::new(centers[center], phi, gamma)?;
        let members = patch_members(center, self.config.radius, &plane, centers, self.prepared.dataset().kappa);
        let locals: Vec<usize> = members.into_iter().filter(|&l| self.labels[l].is_none()).collect();
        Ok(self.patch_query(center, Some(plane), locals, None))
    }

    fn optimal_patch(&self, unlabeled: &[usize]) -> Result<Query> {
        let measure = self.strategy.entropy_measure().expect("p* requires an entropy measure");
        let field = match self.strategy.scoring {
            Scoring::Combined(_) => self.combined_field(measure)?,
            _ => self.feature_field(measure)?,
        };
        let mut u = field.into_vec();
        for (l, label) in self.labels.iter().enumerate() {
            if label.is_some() {
                u[l] = 0.0;
            }
        }
        let u = UncertaintyField::new(u)?;
        let best = select_best_patch_among(
            &u,
            unlabeled,
            self.config.top_t,
            self.config.radius,
            self.prepared.pool_centers(),
            self.prepared.dataset().kappa,
        )?;
        let locals: Vec<usize> = best.members.iter().copied().filter(|&l| self.labels[l].is_none()).collect();
        Ok(self.patch_query(best.center, Some(best.plane), locals, Some(best.uncertainty)))
    }

    fn patch_query(
        &self,
        center: usize,
        plane: Option<Plane>,
        locals: impl IntoIterator<Item = usize>,
        uncertainty: Option<f64>,
    ) -> Query {
        let pool = self.prepared.pool();
        let mut members: Vec<usize> = locals.into_iter().map(|l| pool[l]).collect();
        members.sort_unstable();
        members.dedup();
        Query::Patch {
            center: pool[center],
            plane,
            members,
            uncertainty,
        }
    }

    pub fn prepared(&self) -> &Arc<PreparedDataset> {
        &self.prepared
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn metric_kind(&self) -> MetricKind {
        self.metric
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn inputs_spent(&self) -> usize {
        self.inputs_spent
    }

    pub fn remaining(&self) -> usize {
        self.budget - self.inputs_spent
    }

    pub fn labeled_count(&self) -> usize {
        self.labeled
    }

    pub fn unlabeled_count(&self) -> usize {
        self.labels.len() - self.labeled
    }

    /// Label of a pool member, by global id.
    pub fn label(&self, global: usize) -> Option<usize> {
        self.prepared.local(global).and_then(|l| self.labels[l])
    }

    /// Predicted class of a pool member under the latest model.
    pub fn predicted_class(&self, global: usize) -> Option<usize> {
        let l = self.prepared.local(global)?;
        self.state.as_ref().map(|s| s.predicted[l])
    }

    pub fn curve(&self) -> &[CurvePoint] {
        &self.curve
    }
}

fn probabilities(model: &BoostedModel, h: &ThresholdVector, rows: &[Vec<f64>]) -> Result<Vec<ClassProbabilities>> {
    Ok(model.scores_batch(rows)?.iter().map(|s| scores_to_probs(s, h)).collect())
}

/// Candidate with the largest score; ties go to the earliest candidate.
fn best_of(candidates: &[usize], scores: &[f64]) -> usize {
    let mut best = candidates[0];
    for &c in &candidates[1..] {
        if scores[c] > scores[best] {
            best = c;
        }
    }
    best
}

/// Runs one repeat to the budget: train, record, query, answer, repeat.
/// Stops early when the pool is exhausted or the next answer would overrun
/// the budget.
pub fn run_repeat(
    prepared: &Arc<PreparedDataset>,
    strategy: Strategy,
    config: &EngineConfig,
    seed: u64,
    repeat: u64,
) -> Result<Vec<CurvePoint>> {
    let mut session = ALSession::new(Arc::clone(prepared), strategy, config.clone(), seed, repeat)?;
    session.seed_from_ground_truth()?;
    let truth = &prepared.dataset().ground_truth;
    loop {
        session.retrain()?;
        if session.remaining() == 0 {
            break;
        }
        let Some(query) = session.next_query()? else { break };
        let answer = oracle_answer(&query, truth)?;
        if answer.cost > session.remaining() {
            break;
        }
        session.apply(&answer.labels, answer.cost)?;
    }
    Ok(session.curve)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub strategy: Strategy,
    pub metric: MetricKind,
    pub budget: usize,
    /// One curve per repeat, indexed by repeat.
    pub curves: Vec<Vec<CurvePoint>>,
    pub aulc: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BandPoint {
    pub inputs: usize,
    pub mean: f64,
    pub p10: f64,
    pub p90: f64,
}

impl ExperimentResult {
    pub fn mean_aulc(&self) -> f64 {
        self.aulc.iter().sum::<f64>() / self.aulc.len() as f64
    }

    /// Mean curve with the 10th/90th percentile band, at every input count.
    pub fn band(&self) -> Vec<BandPoint> {
        let sampled: Vec<Vec<f64>> = self.curves.iter().map(|c| resample(c, self.budget)).collect();
        (0..=self.budget)
            .map(|x| {
                let values: Vec<f64> = sampled.iter().map(|s| s[x]).collect();
                BandPoint {
                    inputs: x,
                    mean: values.iter().sum::<f64>() / values.len() as f64,
                    p10: percentile(&values, 0.1),
                    p90: percentile(&values, 0.9),
                }
            })
            .collect()
    }
}

/// Runs `repeats` independent repeats (in parallel) of one strategy.
pub fn run_experiment(
    prepared: &Arc<PreparedDataset>,
    strategy: Strategy,
    config: &EngineConfig,
    repeats: usize,
    seed: u64,
) -> Result<ExperimentResult> {
    if repeats == 0 {
        return Err(Error::invalid("repeats must be >= 1"));
    }
    let curves = (0..repeats as u64)
        .into_par_iter()
        .map(|r| run_repeat(prepared, strategy, config, seed, r))
        .collect::<Result<Vec<_>>>()?;
    let ds = prepared.dataset();
    let budget = config.budget_for(ds.num_classes());
    Ok(ExperimentResult {
        strategy,
        metric: config.metric.unwrap_or_else(|| MetricKind::default_for(ds)),
        budget,
        aulc: curves.iter().map(|c| aulc(c, budget)).collect(),
        curves,
    })
}

/// Step-function value of a curve at every input count `0..=budget`; the
/// last recorded value carries forward past an early stop.
pub fn resample(curve: &[CurvePoint], budget: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(budget + 1);
    let mut next = 0;
    let mut current = curve.first().map_or(0.0, |p| p.value);
    for x in 0..=budget {
        while next < curve.len() && curve[next].inputs <= x {
            current = curve[next].value;
            next += 1;
        }
        out.push(current);
    }
    out
}

/// Area under the learning curve, normalized by the budget: the mean of the
/// step function over input counts `1..=budget`.
pub fn aulc(curve: &[CurvePoint], budget: usize) -> f64 {
    let values = resample(curve, budget);
    if budget == 0 {
        return values[0];
    }
    values[1..].iter().sum::<f64>() / budget as f64
}

/// Linear-interpolation percentile, `q` in [0, 1].
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SignTest {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// One-sided exact binomial p-value for "a beats b"; ties are dropped.
    pub p_value: f64,
}

/// Paired one-sided sign test of `a > b`.
pub fn sign_test(a: &[f64], b: &[f64]) -> Result<SignTest> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let wins = a.iter().zip(b).filter(|(x, y)| x > y).count();
    let losses = a.iter().zip(b).filter(|(x, y)| x < y).count();
    let n = wins + losses;
    // P(X >= wins) for X ~ Binomial(n, 1/2), summed in log space.
    let ln_choose = |k: usize| -> f64 { (1..=k).map(|i| ((n - k + i) as f64 / i as f64).ln()).sum() };
    let p_value = (wins..=n)
        .map(|k| (ln_choose(k) - n as f64 * std::f64::consts::LN_2).exp())
        .sum::<f64>()
        .min(1.0);
    Ok(SignTest {
        wins,
        losses,
        ties: a.len() - n,
        p_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_names_round_trip() {
        for name in [
            "Rand", "FEnt", "FEntS", "FEntC", "CEnt", "CEntS", "CEntC", "FMnMx", "FMnMar", "pRand", "pFEnt", "pCEnt",
            "p*FEnt", "p*FEntS", "p*FEntC", "p*CEnt", "p*CEntS", "p*CEntC", "MaxError", "Boundary",
        ] {
            let s: Strategy = name.parse().unwrap();
            assert_eq!(s.to_string(), name);
        }
        let s: Strategy = "p*CEnt".parse().unwrap();
        assert_eq!(s.selection, Selection::OptimalPlane);
        assert_eq!(s.scoring, Scoring::Combined(UncertaintyMeasure::TotalEntropy));
    }

    #[test]
    fn invalid_strategy_names_rejected() {
        for name in ["", "Ent", "p*Rand", "p*FMnMx", "pMaxError", "p*Boundary", "fent", "CMnMx"] {
            assert!(matches!(name.parse::<Strategy>(), Err(Error::UnknownStrategy(_))), "{name}");
        }
    }

    #[test]
    fn strategy_serde_uses_names() {
        let s: Strategy = serde_json::from_str("\"pCEnt\"").unwrap();
        assert_eq!(serde_json::to_string(&s).unwrap(), "\"pCEnt\"");
        assert!(serde_json::from_str::<Strategy>("\"bogus\"").is_err());
    }

    #[test]
    fn query_costs() {
        let gt = vec![0, 1, 2, 3, 0, 1];
        let single = Query::Single { id: 2 };
        assert_eq!(oracle_answer(&single, &gt).unwrap().cost, 1);
        let patch = |members: Vec<usize>| Query::Patch {
            center: members[0],
            plane: None,
            members,
            uncertainty: None,
        };
        assert_eq!(oracle_answer(&patch(vec![0, 4]), &gt).unwrap().cost, 2);
        assert_eq!(oracle_answer(&patch(vec![0, 1, 4, 5]), &gt).unwrap().cost, 2);
        let four = oracle_answer(&patch(vec![0, 1, 2, 3]), &gt).unwrap();
        assert_eq!(four.cost, 3);
        assert_eq!(four.labels, vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
    }

    #[test]
    fn metric_examples() {
        let p = [0, 1, 1, 0];
        for kind in [MetricKind::Iou, MetricKind::Dice, MetricKind::AvgPrecision, MetricKind::Accuracy] {
            assert_eq!(metric(&p, &p, kind, 2).unwrap(), 1.0);
        }
        assert_eq!(metric(&[1, 0], &[0, 1], MetricKind::Iou, 2).unwrap(), 0.0);
        assert_eq!(metric(&[1, 0], &[0, 1], MetricKind::Dice, 2).unwrap(), 0.0);
        let truth = [1, 1, 0, 0];
        let pred = [1, 1, 1, 1];
        assert_eq!(metric(&pred, &truth, MetricKind::Iou, 2).unwrap(), 0.5);
        assert!((metric(&pred, &truth, MetricKind::Dice, 2).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(metric(&[0, 0], &[0, 0], MetricKind::Iou, 2).unwrap(), 1.0);
    }

    #[test]
    fn average_precision_counts_unpredicted_classes_as_zero() {
        // class 0: 1/2 precise, class 1: 1/1, class 2: never predicted
        let pred = [0, 0, 1];
        let truth = [0, 2, 1];
        let v = metric(&pred, &truth, MetricKind::AvgPrecision, 3).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn metric_rejects_bad_input() {
        assert!(metric(&[0], &[0, 1], MetricKind::Iou, 2).is_err());
        assert!(metric(&[], &[], MetricKind::Iou, 2).is_err());
        assert!(metric(&[2], &[0], MetricKind::Iou, 2).is_err());
    }

    #[test]
    fn resample_and_area() {
        let curve = [
            CurvePoint { inputs: 0, value: 0.2 },
            CurvePoint { inputs: 2, value: 0.6 },
            CurvePoint { inputs: 3, value: 1.0 },
        ];
        assert_eq!(resample(&curve, 5), vec![0.2, 0.2, 0.6, 1.0, 1.0, 1.0]);
        assert!((aulc(&curve, 4) - (0.2 + 0.6 + 1.0 + 1.0) / 4.0).abs() < 1e-15);
        assert_eq!(aulc(&curve[..1], 0), 0.2);
    }

    #[test]
    fn percentile_interpolates() {
        let v = [4.0, 1.0, 3.0, 2.0, 5.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 0.5), 3.0);
        assert_eq!(percentile(&v, 1.0), 5.0);
        assert!((percentile(&v, 0.1) - 1.4).abs() < 1e-12);
        assert!((percentile(&v, 0.9) - 4.6).abs() < 1e-12);
    }

    #[test]
    fn sign_test_binomial_tail() {
        let a = [1.0; 10];
        let mut b = [0.0; 10];
        let t = sign_test(&a, &b).unwrap();
        assert_eq!((t.wins, t.losses, t.ties), (10, 0, 0));
        assert!((t.p_value - 1.0 / 1024.0).abs() < 1e-15);
        // 8 wins, 2 losses: P(X >= 8) = (45 + 10 + 1) / 1024
        b[0] = 2.0;
        b[1] = 2.0;
        let t = sign_test(&a, &b).unwrap();
        assert!((t.p_value - 56.0 / 1024.0).abs() < 1e-14);
        let t = sign_test(&[1.0, 1.0], &[1.0, 1.0]).unwrap();
        assert_eq!((t.ties, t.p_value), (2, 1.0));
    }

    #[test]
    fn best_of_prefers_earliest_on_ties() {
        assert_eq!(best_of(&[3, 1, 2], &[0.0, 5.0, 5.0, 5.0]), 3);
        assert_eq!(best_of(&[0, 2], &[1.0, 9.0, 2.0]), 2);
    }

    #[test]
    fn derived_seeds_differ_per_part() {
        assert_ne!(derive_seed(&[1, 2]), derive_seed(&[2, 1]));
        assert_eq!(derive_seed(&[7, 0, 3]), derive_seed(&[7, 0, 3]));
    }
}
