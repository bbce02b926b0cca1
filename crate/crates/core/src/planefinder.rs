//! Planar patch selection through a supervoxel center.
//!
//! A plane through center `c` is parameterized by two angles in `[0, pi)`.
//! Its patch is every supervoxel center within `r` of `c` and within `2 kappa`
//! of the plane. Branch and bound searches the angle square for the plane whose
//! patch carries the most uncertainty, splitting angular boxes ("corridors")
//! at their midpoints and bounding each box from its corner planes.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geomgraph::UncertaintyField;

/// Normals shorter than this (before normalization) are degenerate.
pub const DEGENERATE_NORM: f64 = 1e-9;

/// Corridors narrower than this, in radians, stop splitting and yield their best probe plane.
pub const MIN_CORRIDOR_WIDTH: f64 = 1e-7;

/// Corridors touching a degenerate angle pair are dropped once narrower than
/// this. Near those pairs every plane containing the y axis is approached, so
/// the bound there never tightens under splitting.
pub const SINGULAR_EXCLUSION: f64 = 1e-6;

#[inline]
fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn raw_normal(phi: f64, gamma: f64) -> [f64; 3] {
    let (sp, cp) = phi.sin_cos();
    let (sg, cg) = gamma.sin_cos();
    [cp * cg, sp * cg, sp * sg]
}

/// Unit normal of the plane with angles `(phi, gamma)`.
pub fn plane_normal(phi: f64, gamma: f64) -> Result<[f64; 3]> {
    let n = raw_normal(phi, gamma);
    let norm = dot(n, n).sqrt();
    if norm < DEGENERATE_NORM {
        return Err(Error::DegeneratePlane { phi, gamma });
    }
    Ok([n[0] / norm, n[1] / norm, n[2] / norm])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub center: [f64; 3],
    pub phi: f64,
    pub gamma: f64,
    normal: [f64; 3],
}

impl Plane {
    pub fn new(center: [f64; 3], phi: f64, gamma: f64) -> Result<Self> {
        if !(0.0..=PI).contains(&phi) || !(0.0..=PI).contains(&gamma) {
            return Err(Error::invalid(format!("plane angles out of range: ({phi}, {gamma})")));
        }
        Ok(Self {
            center,
            phi,
            gamma,
            normal: plane_normal(phi, gamma)?,
        })
    }

    pub fn normal(&self) -> [f64; 3] {
        self.normal
    }

    /// Signed distance of `p` from the plane.
    pub fn signed_distance(&self, p: [f64; 3]) -> f64 {
        dot(self.normal, sub(p, self.center))
    }

    /// Orthonormal in-plane axes: `u` along `(sin phi, -cos phi, 0)`, `v = n x u`.
    pub fn basis(&self) -> ([f64; 3], [f64; 3]) {
        let u = [self.phi.sin(), -self.phi.cos(), 0.0];
        (u, cross(self.normal, u))
    }
}

/// Box of angle pairs `[phi_min, phi_max] x [gamma_min, gamma_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corridor {
    phi: [f64; 2],
    gamma: [f64; 2],
}

impl Corridor {
    pub fn new(phi_min: f64, phi_max: f64, gamma_min: f64, gamma_max: f64) -> Result<Self> {
        let ok = 0.0 <= phi_min && phi_min < phi_max && phi_max <= PI && 0.0 <= gamma_min && gamma_min < gamma_max && gamma_max <= PI;
        if !ok {
            return Err(Error::invalid(format!(
                "bad corridor [{phi_min}, {phi_max}) x [{gamma_min}, {gamma_max})"
            )));
        }
        Ok(Self {
            phi: [phi_min, phi_max],
            gamma: [gamma_min, gamma_max],
        })
    }

    /// Every plane through the center.
    pub fn full() -> Self {
        Self {
            phi: [0.0, PI],
            gamma: [0.0, PI],
        }
    }

    pub fn phi(&self) -> [f64; 2] {
        self.phi
    }

    pub fn gamma(&self) -> [f64; 2] {
        self.gamma
    }

    pub fn width(&self) -> f64 {
        (self.phi[1] - self.phi[0]).max(self.gamma[1] - self.gamma[0])
    }

    pub fn contains(&self, phi: f64, gamma: f64) -> bool {
        (self.phi[0]..=self.phi[1]).contains(&phi) && (self.gamma[0]..=self.gamma[1]).contains(&gamma)
    }

    /// Midpoint angles.
    pub fn bisector(&self) -> (f64, f64) {
        (0.5 * (self.phi[0] + self.phi[1]), 0.5 * (self.gamma[0] + self.gamma[1]))
    }

    /// Corner angle pairs in the order (min,min), (max,min), (min,max), (max,max).
    pub fn corners(&self) -> [(f64, f64); 4] {
        [
            (self.phi[0], self.gamma[0]),
            (self.phi[1], self.gamma[0]),
            (self.phi[0], self.gamma[1]),
            (self.phi[1], self.gamma[1]),
        ]
    }

    /// Four quadrants around the bisector.
    pub fn split(&self) -> [Corridor; 4] {
        let (pm, gm) = self.bisector();
        let q = |p: [f64; 2], g: [f64; 2]| Corridor { phi: p, gamma: g };
        [
            q([self.phi[0], pm], [self.gamma[0], gm]),
            q([pm, self.phi[1]], [self.gamma[0], gm]),
            q([self.phi[0], pm], [gm, self.gamma[1]]),
            q([pm, self.phi[1]], [gm, self.gamma[1]]),
        ]
    }

    fn corner_normals(&self) -> Vec<[f64; 3]> {
        self.corners()
            .iter()
            .filter_map(|&(p, g)| plane_normal(p, g).ok())
            .collect()
    }

    fn spans_half_turn(&self) -> bool {
        self.phi[1] - self.phi[0] >= PI || self.gamma[1] - self.gamma[0] >= PI
    }
}

/// Decides corridor membership for offsets relative to the center.
///
/// Along either angle the normal's dot product with a fixed point is a
/// sinusoid, so on a box narrower than a half turn the corner signs fix the
/// sign everywhere inside. A point is excluded only when every corner plane
/// keeps it more than `2 kappa` away on the same side. The degenerate corners
/// can be skipped because their adjacent edges carry the same normal as the
/// neighbouring corners.
struct CorridorTest {
    normals: Vec<[f64; 3]>,
    everything: bool,
    slack: f64,
}

impl CorridorTest {
    fn new(corridor: &Corridor, kappa: f64) -> Self {
        Self {
            normals: corridor.corner_normals(),
            everything: corridor.spans_half_turn(),
            slack: 2.0 * kappa,
        }
    }

    #[inline]
    fn admits(&self, w: [f64; 3]) -> bool {
        if self.everything || self.normals.is_empty() {
            return true;
        }
        let mut above = true;
        let mut below = true;
        for &n in &self.normals {
            let d = dot(n, w);
            above &= d > self.slack;
            below &= d < -self.slack;
        }
        !(above || below)
    }
}

/// Ids within distance `r` of the center, ascending.
pub fn ball_members(center: usize, r: f64, centers: &[[f64; 3]]) -> Vec<usize> {
    let c = centers[center];
    centers
        .iter()
        .enumerate()
        .filter(|&(_, &p)| {
            let w = sub(p, c);
            dot(w, w).sqrt() <= r
        })
        .map(|(j, _)| j)
        .collect()
}

/// Ids within `r` of the center and within `2 kappa` of the plane, ascending.
/// The center itself is always a member.
pub fn patch_members(center: usize, r: f64, plane: &Plane, centers: &[[f64; 3]], kappa: f64) -> Vec<usize> {
    let c = centers[center];
    let slack = 2.0 * kappa;
    centers
        .iter()
        .enumerate()
        .filter(|&(j, &p)| {
            if j == center {
                return true;
            }
            let w = sub(p, c);
            dot(w, w).sqrt() <= r && dot(plane.normal, w).abs() <= slack
        })
        .map(|(j, _)| j)
        .collect()
}

/// Total uncertainty of the given members.
pub fn plane_uncertainty(members: &[usize], u: &UncertaintyField) -> f64 {
    let u = u.as_slice();
    members.iter().map(|&j| u[j]).sum()
}

/// Upper bound on the patch uncertainty of every plane in the corridor.
pub fn corridor_uncertainty(
    corridor: &Corridor,
    center: usize,
    r: f64,
    centers: &[[f64; 3]],
    kappa: f64,
    u: &UncertaintyField,
) -> f64 {
    let test = CorridorTest::new(corridor, kappa);
    let c = centers[center];
    let u = u.as_slice();
    ball_members(center, r, centers)
        .into_iter()
        .filter(|&j| j == center || test.admits(sub(centers[j], c)))
        .map(|j| u[j])
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchQuery {
    pub center: usize,
    pub plane: Plane,
    pub radius: f64,
    pub members: Vec<usize>,
    pub uncertainty: f64,
}

impl PatchQuery {
    fn build(center: usize, r: f64, plane: Plane, centers: &[[f64; 3]], kappa: f64, u: &UncertaintyField) -> Self {
        let members = patch_members(center, r, &plane, centers, kappa);
        let uncertainty = plane_uncertainty(&members, u);
        Self {
            center,
            plane,
            radius: r,
            members,
            uncertainty,
        }
    }
}

/// Bookkeeping from one search.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SearchStats {
    /// Bound of every popped queue entry, in pop order.
    pub popped: Vec<f64>,
    pub corridors_evaluated: usize,
}

struct Point {
    w: [f64; 3],
    norm: f64,
    u: f64,
}

enum Entry {
    Corridor { corridor: Corridor, base: f64, members: Box<[u32]> },
    Candidate { phi: f64, gamma: f64 },
}

struct Queued {
    bound: f64,
    seq: u64,
    entry: Entry,
}

impl Queued {
    fn exact(&self) -> bool {
        matches!(self.entry, Entry::Candidate { .. })
    }
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    // max-heap: larger bound, then exact candidates, then earlier insertion
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound
            .total_cmp(&other.bound)
            .then(self.exact().cmp(&other.exact()))
            .then(other.seq.cmp(&self.seq))
    }
}

struct Search<'a> {
    points: &'a [Point],
    kappa: f64,
    heap: BinaryHeap<Queued>,
    seq: u64,
    stats: SearchStats,
}

impl Search<'_> {
    fn push(&mut self, bound: f64, entry: Entry) {
        self.heap.push(Queued {
            bound,
            seq: self.seq,
            entry,
        });
        self.seq += 1;
    }

    /// Splits a corridor and queues its four children. Points covered by every
    /// plane of a child move into that child's `base`; the rest stay listed
    /// while some plane of the child can reach them.
    fn push_children(&mut self, corridor: &Corridor, parent_bound: f64, parent_base: f64, parent: &[u32]) {
        let children = corridor.split();
        let phis = [corridor.phi[0], children[0].phi[1], corridor.phi[1]];
        let gammas = [corridor.gamma[0], children[0].gamma[1], corridor.gamma[1]];
        // degenerate grid normals are left as NaN so every comparison skips them
        let mut grid = [[[f64::NAN; 3]; 3]; 3];
        for (i, &p) in phis.iter().enumerate() {
            for (k, &g) in gammas.iter().enumerate() {
                if let Ok(n) = plane_normal(p, g) {
                    grid[i][k] = n;
                }
            }
        }
        let slack = 2.0 * self.kappa;
        let valid: [bool; 9] = std::array::from_fn(|q| !grid[q / 3][q % 3][0].is_nan());
        let sure: [(([f64; 3], f64), f64); 4] = std::array::from_fn(|c| {
            let (pm, gm) = children[c].bisector();
            let n0 = raw_normal(pm, gm);
            // the raw normal moves at most unit speed along each angle
            let reach = 0.5 * (children[c].phi[1] - children[c].phi[0] + children[c].gamma[1] - children[c].gamma[0]);
            ((n0, dot(n0, n0).sqrt()), reach)
        });
        let mut base = [parent_base; 4];
        let mut members: [Vec<u32>; 4] = std::array::from_fn(|_| Vec::with_capacity(parent.len()));
        for &j in parent {
            let p = &self.points[j as usize];
            let w = p.w;
            let mut pos = [false; 9];
            let mut neg = [false; 9];
            for (idx, n) in grid.iter().flatten().enumerate() {
                let v = dot(*n, w);
                // NaN rows (degenerate corners) read as neither side and stay skipped below
                pos[idx] = v > slack;
                neg[idx] = v < -slack;
            }
            for c in 0..4 {
                let (i0, k0) = (c % 2, c / 2);
                let corners = [i0 * 3 + k0, (i0 + 1) * 3 + k0, i0 * 3 + k0 + 1, (i0 + 1) * 3 + k0 + 1];
                let mut above = true;
                let mut below = true;
                for &q in &corners {
                    if valid[q] {
                        above &= pos[q];
                        below &= neg[q];
                    }
                }
                if above || below {
                    continue;
                }
                let ((n0, norm0), reach) = sure[c];
                if norm0 > reach && dot(n0, w).abs() + p.norm * reach <= slack * (norm0 - reach) {
                    base[c] += p.u;
                } else {
                    members[c].push(j);
                }
            }
        }
        for ((child, base), members) in children.into_iter().zip(base).zip(members) {
            if child.width() < SINGULAR_EXCLUSION && child.corners().iter().any(|&(p, g)| plane_normal(p, g).is_err()) {
                continue;
            }
            let listed: f64 = members.iter().map(|&j| self.points[j as usize].u).sum();
            self.stats.corridors_evaluated += 1;
            // a sub-box never bounds higher; clamp away summation-order rounding
            let bound = (base + listed).min(parent_bound);
            self.push(
                bound,
                Entry::Corridor {
                    corridor: child,
                    base,
                    members: members.into_boxed_slice(),
                },
            );
        }
    }

    /// Whether the plane touches every listed point, and its uncertainty over them.
    fn cover(&self, normal: [f64; 3], members: &[u32]) -> (bool, f64) {
        let slack = 2.0 * self.kappa;
        let mut all = true;
        let mut sum = 0.0;
        for &j in members {
            let p = &self.points[j as usize];
            if dot(normal, p.w).abs() <= slack {
                sum += p.u;
            } else {
                all = false;
            }
        }
        (all, sum)
    }

    fn run(mut self) -> ((f64, f64), SearchStats) {
        let all: Vec<u32> = (0..self.points.len() as u32).collect();
        let root = Corridor::full();
        let (rp, rg) = root.bisector();
        if self.cover(raw_normal(rp, rg), &all).0 {
            return ((rp, rg), self.stats);
        }
        let total: f64 = self.points.iter().map(|p| p.u).sum();
        self.push_children(&root, total, 0.0, &all);
        while let Some(top) = self.heap.pop() {
            self.stats.popped.push(top.bound);
            let bound = top.bound;
            let (corridor, base, members) = match top.entry {
                Entry::Candidate { phi, gamma } => return ((phi, gamma), self.stats),
                Entry::Corridor { corridor, base, members } => (corridor, base, members),
            };
            let (p0, g0) = corridor.bisector();
            let n0 = plane_normal(p0, g0).expect("bisector of a split corridor is never degenerate");
            let (touches_all, u0) = self.cover(n0, &members);
            if touches_all {
                return ((p0, g0), self.stats);
            }
            if corridor.width() < MIN_CORRIDOR_WIDTH {
                let mut best = (base + u0, p0, g0);
                for (p, g) in corridor.corners() {
                    if let Ok(n) = plane_normal(p, g) {
                        let v = base + self.cover(n, &members).1;
                        if v > best.0 {
                            best = (v, p, g);
                        }
                    }
                }
                self.push(best.0.min(bound), Entry::Candidate { phi: best.1, gamma: best.2 });
                continue;
            }
            self.push((base + u0).min(bound), Entry::Candidate { phi: p0, gamma: g0 });
            self.push_children(&corridor, bound, base, &members);
        }
        unreachable!("the queue always holds the root quadrants or a candidate")
    }
}

/// Branch-and-bound search for the most uncertain patch through `center`,
/// also returning the popped-bound trace.
pub fn branch_and_bound_with_stats(
    center: usize,
    r: f64,
    centers: &[[f64; 3]],
    kappa: f64,
    u: &UncertaintyField,
) -> Result<(PatchQuery, SearchStats)> {
    check_inputs(center, r, centers, kappa, u)?;
    let c = centers[center];
    let uv = u.as_slice();
    // points without uncertainty cannot change any bound
    let points: Vec<Point> = ball_members(center, r, centers)
        .into_iter()
        .filter(|&j| uv[j] > 0.0)
        .map(|j| {
            let w = sub(centers[j], c);
            Point {
                w,
                norm: dot(w, w).sqrt(),
                u: uv[j],
            }
        })
        .collect();
    let search = Search {
        points: &points,
        kappa,
        heap: BinaryHeap::new(),
        seq: 0,
        stats: SearchStats::default(),
    };
    let ((phi, gamma), stats) = search.run();
    let plane = Plane::new(c, phi, gamma)?;
    Ok((PatchQuery::build(center, r, plane, centers, kappa, u), stats))
}

/// Most uncertain patch through `center` over all non-degenerate planes.
pub fn branch_and_bound(
    center: usize,
    r: f64,
    centers: &[[f64; 3]],
    kappa: f64,
    u: &UncertaintyField,
) -> Result<PatchQuery> {
    branch_and_bound_with_stats(center, r, centers, kappa, u).map(|(q, _)| q)
}

/// Best plane on a regular angle grid with spacing `step`; ties go to the
/// lexicographically smallest `(phi, gamma)`.
pub fn exhaustive_plane_search(
    center: usize,
    r: f64,
    centers: &[[f64; 3]],
    kappa: f64,
    u: &UncertaintyField,
    step: f64,
) -> Result<PatchQuery> {
    check_inputs(center, r, centers, kappa, u)?;
    if !(step > 0.0) {
        return Err(Error::invalid(format!("grid step must be > 0, got {step}")));
    }
    let c = centers[center];
    let uv = u.as_slice();
    let points: Vec<([f64; 3], f64)> = ball_members(center, r, centers)
        .into_iter()
        .filter(|&j| uv[j] > 0.0)
        .map(|j| (sub(centers[j], c), uv[j]))
        .collect();
    let slack = 2.0 * kappa;
    let steps = (PI / step).ceil() as usize;
    let mut best: Option<(f64, f64, f64)> = None;
    for i in 0..steps {
        let phi = i as f64 * step;
        if phi >= PI {
            break;
        }
        for k in 0..steps {
            let gamma = k as f64 * step;
            if gamma >= PI {
                break;
            }
            let Ok(n) = plane_normal(phi, gamma) else { continue };
            let v: f64 = points.iter().filter(|(w, _)| dot(n, *w).abs() <= slack).map(|p| p.1).sum();
            if best.is_none_or(|b| v > b.0) {
                best = Some((v, phi, gamma));
            }
        }
    }
    let (_, phi, gamma) = best.expect("the grid contains a non-degenerate plane");
    let plane = Plane::new(c, phi, gamma)?;
    Ok(PatchQuery::build(center, r, plane, centers, kappa, u))
}

/// Runs the plane search from the `t` most uncertain supervoxels and keeps
/// the best patch. Ties go to the lower id at both stages.
pub fn select_best_patch(
    u: &UncertaintyField,
    t: usize,
    r: f64,
    centers: &[[f64; 3]],
    kappa: f64,
) -> Result<PatchQuery> {
    let all: Vec<usize> = (0..u.len()).collect();
    select_best_patch_among(u, &all, t, r, centers, kappa)
}

/// Like [`select_best_patch`] but only `candidates` may serve as centers.
pub fn select_best_patch_among(
    u: &UncertaintyField,
    candidates: &[usize],
    t: usize,
    r: f64,
    centers: &[[f64; 3]],
    kappa: f64,
) -> Result<PatchQuery> {
    if u.is_empty() || candidates.is_empty() {
        return Err(Error::EmptyPool);
    }
    if t == 0 {
        return Err(Error::invalid("t must be >= 1"));
    }
    let uv = u.as_slice();
    let mut order = candidates.to_vec();
    order.sort_by(|&a, &b| uv[b].total_cmp(&uv[a]).then(a.cmp(&b)));
    order.dedup();
    order.truncate(t);
    order.sort_unstable();
    let results: Vec<PatchQuery> = order
        .par_iter()
        .map(|&i| branch_and_bound(i, r, centers, kappa, u))
        .collect::<Result<_>>()?;
    let mut best: Option<PatchQuery> = None;
    for q in results {
        if best.as_ref().is_none_or(|b| q.uncertainty > b.uncertainty) {
            best = Some(q);
        }
    }
    Ok(best.expect("t >= 1 and candidates are nonempty"))
}

fn check_inputs(center: usize, r: f64, centers: &[[f64; 3]], kappa: f64, u: &UncertaintyField) -> Result<()> {
    if u.len() != centers.len() {
        return Err(Error::DimensionMismatch {
            expected: centers.len(),
            got: u.len(),
        });
    }
    if center >= centers.len() {
        return Err(Error::invalid(format!("center {center} out of range")));
    }
    if !(r > 0.0) || !(kappa >= 0.0) {
        return Err(Error::invalid(format!("need r > 0 and kappa >= 0, got r={r}, kappa={kappa}")));
    }
    Ok(())
}
