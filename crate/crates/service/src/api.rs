//! Request and response bodies.

use std::path::PathBuf;

use geoal_core::engine::{CurvePoint, EngineConfig, Strategy};
use geoal_core::synth::SynthSpec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    AwaitingAnnotation,
    Training,
    Done,
}

/// Where a session's data comes from: a dataset manifest relative to the
/// service's data root, or a synthetic volume.
#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetRef {
    Path(PathBuf),
    Synth(SynthSpec),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub dataset: DatasetRef,
    pub strategy: Strategy,
    #[serde(default)]
    pub config: EngineConfig,
    #[serde(default)]
    pub seed: u64,
    /// `[supervoxel id, class]` pairs; seeded from ground truth when absent.
    #[serde(default)]
    pub seed_labels: Option<Vec<(usize, usize)>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreatedSession {
    pub session_id: u64,
    pub status: Status,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlaneInfo {
    pub phi: f64,
    pub gamma: f64,
    pub normal: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RasterInfo {
    pub size: usize,
    /// Base64 of `size * size` bytes, row-major.
    pub intensities: String,
    pub ids: Vec<Option<usize>>,
}

/// The patch disc in raster pixel coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CircleInfo {
    pub center: [usize; 2],
    pub radius: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemberInfo {
    pub id: usize,
    /// In-plane offset of the supervoxel center from the patch center.
    pub u: f64,
    pub v: f64,
    pub predicted: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryResponse {
    pub session_id: u64,
    pub status: Status,
    pub query_id: Option<u64>,
    pub center: Option<usize>,
    pub plane: Option<PlaneInfo>,
    pub radius: f64,
    pub raster: Option<RasterInfo>,
    pub circle: Option<CircleInfo>,
    pub members: Vec<MemberInfo>,
    pub inputs_spent: usize,
    pub budget: usize,
    pub metric: Option<f64>,
}

/// A line in in-plane coordinates (same frame as [`MemberInfo::u`]) and the
/// class on each side. Side a is to the left of `a -> b`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineAnnotation {
    pub a: [f64; 2],
    pub b: [f64; 2],
    pub side_a: usize,
    pub side_b: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Correction {
    pub id: usize,
    pub class: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Annotation {
    Line(LineAnnotation),
    /// Members not listed keep their predicted class.
    Corrections(Vec<Correction>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotateRequest {
    pub query_id: u64,
    pub annotation: Annotation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotateResponse {
    pub accepted: bool,
    pub newly_labeled: usize,
    pub inputs_spent: usize,
    pub status: Status,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsResponse {
    pub session_id: u64,
    pub status: Status,
    pub metric: String,
    pub curve: Vec<CurvePoint>,
    pub inputs_spent: usize,
    pub budget: usize,
    pub labeled: usize,
}
