//! Geometry-aware active learning for binary and multi-class segmentation.
//!
//! Unlabeled supervoxels are ranked by feature, geometric, and combined
//! entropy. In 3-D volumes the engine can query whole planar patches whose
//! orientation is found by branch and bound over the two plane angles.
//!
//! Layout:
//! - [`volume`]: voxel grids, supervoxel maps and datasets
//! - [`io`]: on-disk formats for volumes, maps, features and labels
//! - [`classifier`]: boosted depth-2 trees, score-to-probability mapping, adaptive thresholding
//! - [`uncertainty`]: total, selection and conditional entropy plus min-max / min-margin
//! - [`geomgraph`]: neighbour graph, random-walk propagation, uncertainty fields
//! - [`planefinder`]: plane parameterization, corridor bounds, branch and bound
//! - [`engine`]: strategies, simulated oracle, metrics and learning curves
//! - [`synth`]: synthetic volumes with known ground truth

pub mod classifier;
pub mod engine;
pub mod error;
pub mod geomgraph;
pub mod io;
pub mod planefinder;
pub mod synth;
pub mod uncertainty;
pub mod volume;

pub use error::{Error, Result};
