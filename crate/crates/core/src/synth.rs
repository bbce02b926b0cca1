//! Synthetic volumes with exact ground truth, plus the 8x8 propagation toy.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geomgraph::{NeighborGraph, ProbabilityField};
use crate::uncertainty::ClassProbabilities;
use crate::volume::{grid_kappa, grid_oversegment, Dataset, LabelSet, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeKind {
    /// One ball of foreground.
    Sphere,
    /// Two disjoint balls of foreground along x.
    TwoBlob,
    /// Background, an outer shell and a core with a rectangular notch cut into it.
    Layered,
}

impl ShapeKind {
    pub fn classes(self) -> usize {
        match self {
            ShapeKind::Sphere | ShapeKind::TwoBlob => 2,
            ShapeKind::Layered => 3,
        }
    }

    pub fn label_set(self) -> LabelSet {
        let names: &[&str] = match self {
            ShapeKind::Sphere | ShapeKind::TwoBlob => &["background", "foreground"],
            ShapeKind::Layered => &["background", "shell", "core"],
        };
        LabelSet::new(names.iter().map(|s| s.to_string()).collect()).expect("static label names are valid")
    }
}

fn default_contrast() -> f64 {
    1.0
}

/// Cell edge whose equivalent-sphere radius (about 4.3 voxels) matches
/// typical supervoxel sizes.
fn default_cell() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub dims: [usize; 3],
    pub shape: ShapeKind,
    pub noise_std: f64,
    pub seed: u64,
    /// Intensity step between the darkest and brightest class.
    #[serde(default = "default_contrast")]
    pub contrast: f64,
    /// Outer radius in voxels; defaults to a fraction of the smallest extent.
    #[serde(default)]
    pub radius: Option<f64>,
    /// Edge of the cubic supervoxels used by [`build_dataset`].
    #[serde(default = "default_cell")]
    pub cell: usize,
}

impl SynthSpec {
    pub fn new(dims: [usize; 3], shape: ShapeKind, noise_std: f64, seed: u64) -> Self {
        Self {
            dims,
            shape,
            noise_std,
            seed,
            contrast: default_contrast(),
            radius: None,
            cell: default_cell(),
        }
    }

    fn geometry(&self) -> Result<Geometry> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("dims must be >= 1, got {:?}", self.dims)));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::invalid(format!("noise_std must be >= 0, got {}", self.noise_std)));
        }
        if !(self.contrast > 0.0) || !self.contrast.is_finite() {
            return Err(Error::invalid(format!("contrast must be > 0, got {}", self.contrast)));
        }
        let mid = self.dims.map(|d| (d as f64 - 1.0) / 2.0);
        // extents along axes that are more than one voxel thick
        let half: Vec<f64> = mid.iter().copied().filter(|&h| h > 0.0).collect();
        let min_half = half.iter().copied().fold(f64::INFINITY, f64::min);
        if !min_half.is_finite() {
            return Err(Error::invalid("volume must extend along at least one axis"));
        }
        let min_extent = 2.0 * min_half + 1.0;
        let radius = match self.radius {
            Some(r) => r,
            None => match self.shape {
                ShapeKind::Sphere => 0.3 * min_extent,
                ShapeKind::TwoBlob => 0.2 * min_extent,
                ShapeKind::Layered => 0.4 * min_extent,
            },
        };
        if !(radius >= 1.0) {
            return Err(Error::invalid(format!("shape radius {radius} is below one voxel")));
        }
        let blob_offset = radius + 0.5;
        let fits = match self.shape {
            ShapeKind::Sphere | ShapeKind::Layered => radius <= min_half,
            ShapeKind::TwoBlob => radius <= min_half && blob_offset + radius <= mid[0],
        };
        if !fits {
            return Err(Error::invalid(format!(
                "{:?} of radius {radius} does not fit in {:?}",
                self.shape, self.dims
            )));
        }
        Ok(Geometry {
            mid,
            radius,
            blob_offset,
        })
    }
}

struct Geometry {
    mid: [f64; 3],
    radius: f64,
    blob_offset: f64,
}

impl Geometry {
    fn class_at(&self, shape: ShapeKind, p: [f64; 3]) -> u8 {
        let d = |c: [f64; 3]| ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt();
        match shape {
            ShapeKind::Sphere => u8::from(d(self.mid) <= self.radius),
            ShapeKind::TwoBlob => {
                let left = [self.mid[0] - self.blob_offset, self.mid[1], self.mid[2]];
                let right = [self.mid[0] + self.blob_offset, self.mid[1], self.mid[2]];
                u8::from(d(left) <= self.radius || d(right) <= self.radius)
            }
            ShapeKind::Layered => {
                let core = CORE_FRACTION * self.radius;
                let r = d(self.mid);
                if r > self.radius {
                    0
                } else if r > core || self.in_notch(p) {
                    1
                } else {
                    2
                }
            }
        }
    }

    /// Box cut into the +x side of the core, reaching from half the core radius to its surface.
    fn in_notch(&self, p: [f64; 3]) -> bool {
        let core = CORE_FRACTION * self.radius;
        let w = (0.3 * core).max(0.5);
        let dx = p[0] - self.mid[0];
        dx >= 0.5 * core && (p[1] - self.mid[1]).abs() <= w && (p[2] - self.mid[2]).abs() <= w
    }
}

/// Core radius relative to the outer shell of the layered shape.
pub const CORE_FRACTION: f64 = 0.55;

/// Renders the intensity volume and its exact ground truth.
pub fn generate(spec: &SynthSpec) -> Result<(Volume<f32>, Volume<u8>)> {
    let geom = spec.geometry()?;
    let [nx, ny, nz] = spec.dims;
    let classes = spec.shape.classes();
    let mut truth = Vec::with_capacity(nx * ny * nz);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                truth.push(geom.class_at(spec.shape, [x as f64, y as f64, z as f64]));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::invalid(e.to_string()))?;
    let step = spec.contrast / (classes - 1) as f64;
    let intensity = truth
        .iter()
        .map(|&c| {
            let level = c as f64 * step;
            let n = if spec.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            (level + n) as f32
        })
        .collect();
    Ok((Volume::new(spec.dims, intensity)?, Volume::new(spec.dims, truth)?))
}

/// Generates the volume, tiles it into cubic supervoxels and summarizes them.
pub fn build_dataset(spec: &SynthSpec) -> Result<(Dataset, Volume<u8>)> {
    let (volume, truth) = generate(spec)?;
    let svmap = grid_oversegment(spec.dims, spec.cell)?;
    let dataset = Dataset::from_volume(volume, svmap, &truth, spec.shape.label_set(), grid_kappa(spec.cell))?;
    Ok((dataset, truth))
}

/// Side of the propagation toy image.
pub const TOY_SIDE: usize = 8;

/// The toy image as (row, col) class map: foreground on the right three
/// columns plus a two-pixel notch sticking into the background.
pub fn toy_mask() -> [[u8; TOY_SIDE]; TOY_SIDE] {
    let mut m = [[0u8; TOY_SIDE]; TOY_SIDE];
    for (r, row) in m.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = u8::from(c >= 5 || (c == 4 && (r == 3 || r == 4)));
        }
    }
    m
}

/// Pixel ids (row-major) of the notch.
pub const TOY_NOTCH: [usize; 2] = [3 * TOY_SIDE + 4, 4 * TOY_SIDE + 4];

pub struct PropagationToy {
    pub dataset: Dataset,
    pub graph: NeighborGraph,
    /// One-hot class distribution per pixel.
    pub field: ProbabilityField,
}

/// The 8x8 toy: one superpixel per pixel, a fully confident prediction equal
/// to the ground truth, and the 4-neighbour grid graph with equal weights.
pub fn propagation_toy() -> PropagationToy {
    let n = TOY_SIDE;
    let mask = toy_mask();
    let flat: Vec<u8> = mask.iter().flatten().copied().collect();
    let truth = Volume::new([n, n, 1], flat.clone()).expect("toy dims match");
    let intensity = Volume::new([n, n, 1], flat.iter().map(|&c| c as f32).collect()).expect("toy dims match");
    let svmap = grid_oversegment([n, n, 1], 1).expect("unit cells tile any image");
    let dataset = Dataset::from_volume(intensity, svmap, &truth, ShapeKind::Sphere.label_set(), grid_kappa(1))
        .expect("toy dataset is consistent");
    let edges = (0..n * n)
        .map(|i| {
            let (r, c) = (i / n, i % n);
            let mut e = Vec::with_capacity(4);
            if r > 0 {
                e.push((i - n, 1.0));
            }
            if r + 1 < n {
                e.push((i + n, 1.0));
            }
            if c > 0 {
                e.push((i - 1, 1.0));
            }
            if c + 1 < n {
                e.push((i + 1, 1.0));
            }
            e
        })
        .collect();
    let graph = NeighborGraph::from_weighted_edges(edges).expect("grid edges are valid");
    let rows = flat
        .iter()
        .map(|&c| {
            let mut p = vec![0.0; 2];
            p[c as usize] = 1.0;
            ClassProbabilities::new(p).expect("one-hot rows are distributions")
        })
        .collect();
    let field = ProbabilityField::new(rows).expect("rows share a class count");
    PropagationToy { dataset, graph, field }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_sphere_has_two_levels() {
        let spec = SynthSpec::new([16, 16, 16], ShapeKind::Sphere, 0.0, 1);
        let (v, t) = generate(&spec).unwrap();
        for (a, b) in v.data().iter().zip(t.data()) {
            assert_eq!(*a, *b as f32);
        }
        assert!(t.data().contains(&0) && t.data().contains(&1));
    }

    #[test]
    fn seeded_generation_repeats() {
        let spec = SynthSpec::new([12, 12, 12], ShapeKind::TwoBlob, 0.2, 9);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = SynthSpec { seed: 10, ..spec.clone() };
        assert_ne!(generate(&spec).unwrap().0, generate(&other).unwrap().0);
    }

    #[test]
    fn oversized_shapes_are_rejected() {
        let mut spec = SynthSpec::new([10, 10, 10], ShapeKind::Sphere, 0.0, 0);
        spec.radius = Some(6.0);
        assert!(generate(&spec).is_err());
        spec.radius = Some(0.5);
        assert!(generate(&spec).is_err());
        let blobs = SynthSpec::new([8, 40, 40], ShapeKind::TwoBlob, 0.0, 0);
        assert!(generate(&blobs).is_err());
        assert!(generate(&SynthSpec::new([10, 10, 10], ShapeKind::Sphere, -1.0, 0)).is_err());
    }

    #[test]
    fn layered_has_three_classes_and_a_notch() {
        let spec = SynthSpec::new([32, 32, 32], ShapeKind::Layered, 0.0, 0);
        let (_, t) = generate(&spec).unwrap();
        for c in 0..3u8 {
            assert!(t.data().contains(&c));
        }
        // the notch replaces core with shell right of center
        let mid = 15.5f64;
        let core = CORE_FRACTION * 0.4 * 32.0;
        let x = (mid + 0.75 * core).round() as usize;
        assert_eq!(t.get(x, 15, 15), 1);
        let x = (mid - 0.75 * core).round() as usize;
        assert_eq!(t.get(x, 15, 15), 2);
    }

    #[test]
    fn planar_volumes_are_supported() {
        let mut spec = SynthSpec::new([32, 32, 1], ShapeKind::Sphere, 0.1, 3);
        spec.cell = 4;
        let (ds, _) = build_dataset(&spec).unwrap();
        assert!(ds.is_planar());
        assert_eq!(ds.len(), 64);
    }

    #[test]
    fn toy_is_one_hot_and_confident() {
        let toy = propagation_toy();
        assert_eq!(toy.field.len(), 64);
        assert!(toy.field.rows().all(|r| r.contains(&1.0)));
        for id in TOY_NOTCH {
            assert_eq!(toy.dataset.ground_truth[id], 1);
        }
        assert_eq!(toy.graph.neighbors(0).len(), 2);
        assert_eq!(toy.graph.neighbors(9).len(), 4);
    }
}
