//! Planar view of a patch query and resolution of drawn lines to labels.

use geoal_core::engine::Query;
use geoal_core::volume::Dataset;

/// In-plane coordinate frame: `center + a*u + b*v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub center: [f64; 3],
    pub u: [f64; 3],
    pub v: [f64; 3],
}

impl Frame {
    /// The query plane's basis, or the image axes for planar patches.
    pub fn for_query(query: &Query, dataset: &Dataset) -> Self {
        match query {
            Query::Patch { plane: Some(plane), .. } => {
                let (u, v) = plane.basis();
                Frame {
                    center: plane.center,
                    u,
                    v,
                }
            }
            _ => Frame {
                center: dataset.supervoxels[query.center()].center,
                u: [1.0, 0.0, 0.0],
                v: [0.0, 1.0, 0.0],
            },
        }
    }

    pub fn point(&self, a: f64, b: f64) -> [f64; 3] {
        [0, 1, 2].map(|i| self.center[i] + a * self.u[i] + b * self.v[i])
    }

    pub fn project(&self, p: [f64; 3]) -> [f64; 2] {
        let d = [0, 1, 2].map(|i| p[i] - self.center[i]);
        let dot = |w: [f64; 3]| d[0] * w[0] + d[1] * w[1] + d[2] * w[2];
        [dot(self.u), dot(self.v)]
    }
}

/// Square raster of `size * size` samples at one-voxel pitch, row-major,
/// column index along `u` and row index along `v`, centered on the query.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchRaster {
    pub size: usize,
    /// Min-max normalized intensities; samples outside the volume are 0.
    pub intensities: Vec<u8>,
    /// Supervoxel id per sample, only for query members.
    pub ids: Vec<Option<usize>>,
}

impl PatchRaster {
    /// In-plane offset of a raster cell from the center sample.
    pub fn offset(&self, row: usize, col: usize) -> [f64; 2] {
        let half = (self.size / 2) as f64;
        [col as f64 - half, row as f64 - half]
    }
}

/// Samples the volume on the frame by nearest-voxel lookup. The center
/// sample always carries the query's center id.
pub fn render(dataset: &Dataset, frame: &Frame, radius: f64, query: &Query) -> PatchRaster {
    let half = radius.ceil() as usize;
    let size = 2 * half + 1;
    let members = query.members();
    let (Some(volume), Some(svmap)) = (&dataset.volume, &dataset.svmap) else {
        return PatchRaster {
            size,
            intensities: vec![0; size * size],
            ids: vec![None; size * size],
        };
    };
    let mut raw = Vec::with_capacity(size * size);
    let mut ids = Vec::with_capacity(size * size);
    for row in 0..size {
        for col in 0..size {
            let (a, b) = (col as f64 - half as f64, row as f64 - half as f64);
            match volume.sample_nearest(frame.point(a, b)) {
                Some(voxel) => {
                    raw.push(Some(volume.data()[voxel]));
                    let id = svmap.id_at(voxel) as usize;
                    ids.push(members.binary_search(&id).is_ok().then_some(id));
                }
                None => {
                    raw.push(None);
                    ids.push(None);
                }
            }
        }
    }
    ids[half * size + half] = Some(query.center());
    PatchRaster {
        size,
        intensities: normalize(&raw),
        ids,
    }
}

fn normalize(raw: &[Option<f32>]) -> Vec<u8> {
    let values = raw.iter().flatten().copied();
    let lo = values.clone().fold(f32::INFINITY, f32::min);
    let hi = values.fold(f32::NEG_INFINITY, f32::max);
    raw.iter()
        .map(|v| match v {
            Some(x) if hi > lo => ((x - lo) / (hi - lo) * 255.0).round() as u8,
            _ => 0,
        })
        .collect()
}

/// Which side of the directed line `a -> b` a point falls on. Points with a
/// non-negative cross product, including those on the line, are on side a.
pub fn on_side_a(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    cross >= 0.0
}
