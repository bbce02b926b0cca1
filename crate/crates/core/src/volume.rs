//! Voxel grids, supervoxel decomposition and label bookkeeping.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of per-supervoxel intensity features produced by [`summarize_supervoxels`].
pub const FEATURE_DIM: usize = 5;

/// Dense scalar grid, x fastest-varying, isotropic unit spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    dims: [usize; 3],
    data: Vec<T>,
}

impl<T: Copy> Volume<T> {
    pub fn new(dims: [usize; 3], data: Vec<T>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("volume dims must be >= 1, got {dims:?}")));
        }
        let expected = dims[0] * dims[1] * dims[2];
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn filled(dims: [usize; 3], value: T) -> Result<Self> {
        Self::new(dims, vec![value; dims.iter().product()])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let x = idx % self.dims[0];
        let rest = idx / self.dims[0];
        [x, rest % self.dims[1], rest / self.dims[1]]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.index(x, y, z)]
    }

    /// Nearest-voxel lookup for a continuous position; `None` outside the grid.
    pub fn sample_nearest(&self, p: [f64; 3]) -> Option<usize> {
        let mut c = [0usize; 3];
        for axis in 0..3 {
            let v = p[axis].round();
            if v < 0.0 || v >= self.dims[axis] as f64 {
                return None;
            }
            c[axis] = v as usize;
        }
        Some(self.index(c[0], c[1], c[2]))
    }
}

/// Oversegmentation of a volume into supervoxels with contiguous ids `0..S`.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervoxelMap {
    ids: Volume<u32>,
    count: usize,
}

impl SupervoxelMap {
    /// Validates that ids are contiguous `0..S` with every id present.
    pub fn new(ids: Volume<u32>) -> Result<Self> {
        let max = ids.data().iter().copied().max().unwrap_or(0) as usize;
        let mut seen = vec![false; max + 1];
        for &id in ids.data() {
            seen[id as usize] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidMap(format!("supervoxel id {missing} has no voxels")));
        }
        Ok(Self {
            ids,
            count: max + 1,
        })
    }

    /// Like [`SupervoxelMap::new`] but also requires every region to be 26-connected.
    pub fn new_connected(ids: Volume<u32>) -> Result<Self> {
        let map = Self::new(ids)?;
        if let Some(id) = map.first_disconnected() {
            return Err(Error::InvalidMap(format!("supervoxel {id} is not 26-connected")));
        }
        Ok(map)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.ids.dims()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn ids(&self) -> &Volume<u32> {
        &self.ids
    }

    pub fn id_at(&self, voxel: usize) -> u32 {
        self.ids.data()[voxel]
    }

    /// Returns the first id whose voxel set splits into several 26-connected components.
    pub fn first_disconnected(&self) -> Option<u32> {
        let dims = self.dims();
        let data = self.ids.data();
        let mut visited = vec![false; data.len()];
        let mut components = vec![0u32; self.count];
        let mut queue = VecDeque::new();
        for start in 0..data.len() {
            if visited[start] {
                continue;
            }
            let id = data[start];
            components[id as usize] += 1;
            if components[id as usize] > 1 {
                return Some(id);
            }
            visited[start] = true;
            queue.push_back(start);
            while let Some(v) = queue.pop_front() {
                let [x, y, z] = self.ids.coords(v);
                for dz in -1i64..=1 {
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            let (nx, ny, nz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                            if nx < 0
                                || ny < 0
                                || nz < 0
                                || nx >= dims[0] as i64
                                || ny >= dims[1] as i64
                                || nz >= dims[2] as i64
                            {
                                continue;
                            }
                            let n = self.ids.index(nx as usize, ny as usize, nz as usize);
                            if !visited[n] && data[n] == id {
                                visited[n] = true;
                                queue.push_back(n);
                            }
                        }
                    }
                }
            }
        }
        None
    }

    /// Voxel counts per supervoxel.
    pub fn member_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.count];
        for &id in self.ids.data() {
            counts[id as usize] += 1;
        }
        counts
    }

    /// Mean equivalent-sphere radius `(3 n / 4 pi)^(1/3)` over all supervoxels.
    pub fn mean_equivalent_radius(&self) -> f64 {
        let counts = self.member_counts();
        let total: f64 = counts
            .iter()
            .map(|&n| (3.0 * n as f64 / (4.0 * std::f64::consts::PI)).cbrt())
            .sum();
        total / counts.len() as f64
    }
}

/// Tiles the volume with axis-aligned cubes of edge `cell`, clipped at the
/// borders, with ids assigned in raster order (x fastest).
pub fn grid_oversegment(dims: [usize; 3], cell: usize) -> Result<SupervoxelMap> {
    if cell == 0 {
        return Err(Error::invalid("cell edge must be >= 1"));
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::invalid(format!("volume dims must be >= 1, got {dims:?}")));
    }
    let max_dim = *dims.iter().max().unwrap();
    if cell > max_dim {
        return Err(Error::invalid(format!(
            "cell edge {cell} exceeds every volume dimension {dims:?}"
        )));
    }
    let cells = dims.map(|d| d.div_ceil(cell));
    let mut ids = Vec::with_capacity(dims.iter().product());
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let (cx, cy, cz) = (x / cell, y / cell, z / cell);
                ids.push((cx + cells[0] * (cy + cells[1] * cz)) as u32);
            }
        }
    }
    SupervoxelMap::new(Volume::new(dims, ids)?)
}

/// Equivalent-sphere radius convention for a grid of cubic cells (half the cube diagonal).
pub fn grid_kappa(cell: usize) -> f64 {
    cell as f64 * 3f64.sqrt() / 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Supervoxel {
    pub id: usize,
    pub center: [f64; 3],
    pub features: Vec<f64>,
    pub member_count: usize,
}

/// Per-voxel gradient magnitude by central differences (one-sided at borders).
fn gradient_magnitude(volume: &Volume<f32>) -> Vec<f64> {
    let dims = volume.dims();
    let mut out = vec![0.0; volume.len()];
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let c = [x, y, z];
                let mut sq = 0.0;
                for axis in 0..3 {
                    if dims[axis] < 2 {
                        continue;
                    }
                    let mut lo = c;
                    let mut hi = c;
                    lo[axis] = c[axis].saturating_sub(1);
                    hi[axis] = (c[axis] + 1).min(dims[axis] - 1);
                    let span = (hi[axis] - lo[axis]) as f64;
                    let d = (volume.get(hi[0], hi[1], hi[2]) as f64
                        - volume.get(lo[0], lo[1], lo[2]) as f64)
                        / span;
                    sq += d * d;
                }
                out[volume.index(x, y, z)] = sq.sqrt();
            }
        }
    }
    out
}

/// Computes centers and the five intensity features (mean, standard
/// deviation, min, max, mean gradient magnitude) of every supervoxel.
pub fn summarize_supervoxels(volume: &Volume<f32>, svmap: &SupervoxelMap) -> Result<Vec<Supervoxel>> {
    if volume.dims() != svmap.dims() {
        return Err(Error::invalid(format!(
            "volume dims {:?} differ from supervoxel map dims {:?}",
            volume.dims(),
            svmap.dims()
        )));
    }
    let n = svmap.count();
    let grad = gradient_magnitude(volume);
    let mut count = vec![0usize; n];
    let mut coord_sum = vec![[0.0f64; 3]; n];
    let mut sum = vec![0.0f64; n];
    let mut sum_sq = vec![0.0f64; n];
    let mut min = vec![f64::INFINITY; n];
    let mut max = vec![f64::NEG_INFINITY; n];
    let mut grad_sum = vec![0.0f64; n];
    for (voxel, &value) in volume.data().iter().enumerate() {
        let id = svmap.id_at(voxel) as usize;
        let v = value as f64;
        let c = volume.coords(voxel);
        count[id] += 1;
        for axis in 0..3 {
            coord_sum[id][axis] += c[axis] as f64;
        }
        sum[id] += v;
        sum_sq[id] += v * v;
        min[id] = min[id].min(v);
        max[id] = max[id].max(v);
        grad_sum[id] += grad[voxel];
    }
    Ok((0..n)
        .map(|id| {
            let m = count[id] as f64;
            let mean = sum[id] / m;
            let var = (sum_sq[id] / m - mean * mean).max(0.0);
            Supervoxel {
                id,
                center: coord_sum[id].map(|s| s / m),
                features: vec![mean, var.sqrt(), min[id], max[id], grad_sum[id] / m],
                member_count: count[id],
            }
        })
        .collect())
}

/// Majority-vote class of every supervoxel; ties go to the lowest class index.
pub fn ground_truth_labels(svmap: &SupervoxelMap, gt: &Volume<u8>, classes: usize) -> Result<Vec<usize>> {
    if gt.dims() != svmap.dims() {
        return Err(Error::invalid(format!(
            "ground-truth dims {:?} differ from supervoxel map dims {:?}",
            gt.dims(),
            svmap.dims()
        )));
    }
    let mut votes = vec![0usize; svmap.count() * classes];
    for (voxel, &class) in gt.data().iter().enumerate() {
        let class = class as usize;
        if class >= classes {
            return Err(Error::ClassOutOfRange { class, classes });
        }
        votes[svmap.id_at(voxel) as usize * classes + class] += 1;
    }
    Ok(votes
        .chunks(classes)
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSet {
    names: Vec<String>,
}

impl LabelSet {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.len() < 2 {
            return Err(Error::invalid("a label set needs at least two classes"));
        }
        for (i, a) in names.iter().enumerate() {
            if names[..i].contains(a) {
                return Err(Error::invalid(format!("duplicate class name {a:?}")));
            }
        }
        Ok(Self { names })
    }

    /// `class0`, `class1`, ...
    pub fn numbered(n: usize) -> Result<Self> {
        Self::new((0..n).map(|i| format!("class{i}")).collect())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Everything the engine needs about one image: supervoxels, their features,
/// ground truth and (for image datasets) the raw volume and its oversegmentation.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub volume: Option<Volume<f32>>,
    pub svmap: Option<SupervoxelMap>,
    pub supervoxels: Vec<Supervoxel>,
    pub labels: LabelSet,
    pub ground_truth: Vec<usize>,
    pub kappa: f64,
}

impl Dataset {
    /// Builds an image dataset, computing features and majority-vote labels.
    pub fn from_volume(
        volume: Volume<f32>,
        svmap: SupervoxelMap,
        gt: &Volume<u8>,
        labels: LabelSet,
        kappa: f64,
    ) -> Result<Self> {
        let supervoxels = summarize_supervoxels(&volume, &svmap)?;
        let ground_truth = ground_truth_labels(&svmap, gt, labels.len())?;
        Self::with_parts(Some(volume), Some(svmap), supervoxels, labels, ground_truth, kappa)
    }

    /// Feature-only dataset without geometry.
    pub fn tabular(features: Vec<Vec<f64>>, ground_truth: Vec<usize>, labels: LabelSet) -> Result<Self> {
        let supervoxels = features
            .into_iter()
            .enumerate()
            .map(|(id, features)| Supervoxel {
                id,
                center: [0.0; 3],
                features,
                member_count: 1,
            })
            .collect();
        Self::with_parts(None, None, supervoxels, labels, ground_truth, 1.0)
    }

    pub fn with_parts(
        volume: Option<Volume<f32>>,
        svmap: Option<SupervoxelMap>,
        supervoxels: Vec<Supervoxel>,
        labels: LabelSet,
        ground_truth: Vec<usize>,
        kappa: f64,
    ) -> Result<Self> {
        if supervoxels.len() != ground_truth.len() {
            return Err(Error::DimensionMismatch {
                expected: supervoxels.len(),
                got: ground_truth.len(),
            });
        }
        if let Some(&class) = ground_truth.iter().find(|&&c| c >= labels.len()) {
            return Err(Error::ClassOutOfRange {
                class,
                classes: labels.len(),
            });
        }
        if let Some(first) = supervoxels.first() {
            let d = first.features.len();
            if let Some(sv) = supervoxels.iter().find(|s| s.features.len() != d) {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: sv.features.len(),
                });
            }
        }
        if let (Some(v), Some(m)) = (&volume, &svmap) {
            if v.dims() != m.dims() {
                return Err(Error::invalid("volume and supervoxel map dims differ"));
            }
            if m.count() != supervoxels.len() {
                return Err(Error::DimensionMismatch {
                    expected: m.count(),
                    got: supervoxels.len(),
                });
            }
        }
        if volume.is_some() && !(kappa > 0.0) {
            return Err(Error::invalid("kappa must be positive for image datasets"));
        }
        Ok(Self {
            volume,
            svmap,
            supervoxels,
            labels,
            ground_truth,
            kappa,
        })
    }

    pub fn len(&self) -> usize {
        self.supervoxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.supervoxels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.supervoxels.first().map_or(0, |s| s.features.len())
    }

    pub fn has_geometry(&self) -> bool {
        self.volume.is_some()
    }

    /// True for single-slice image datasets (superpixels rather than supervoxels).
    pub fn is_planar(&self) -> bool {
        self.volume.as_ref().is_some_and(|v| v.dims()[2] == 1)
    }

    pub fn centers(&self) -> Vec<[f64; 3]> {
        self.supervoxels.iter().map(|s| s.center).collect()
    }
}
