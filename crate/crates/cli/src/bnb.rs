//! Plane-search verification against the one-degree grid.

use std::fmt::Write as _;
use std::time::Instant;

use geoal_core::geomgraph::UncertaintyField;
use geoal_core::planefinder::{branch_and_bound, exhaustive_plane_search};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::CliError;

pub const MAX_POINTS: usize = 200;

/// A random plane-search problem centered on supervoxel 0.
#[derive(Debug, Clone)]
pub struct Instance {
    pub centers: Vec<[f64; 3]>,
    pub uncertainty: UncertaintyField,
    pub radius: f64,
    pub kappa: f64,
}

/// Uniform points in the radius ball around the origin; a fifth of them
/// carry no uncertainty. Radius alternates between 10 and 15.
pub fn random_instance(seed: u64, index: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ index);
    let radius = if index % 2 == 0 { 10.0 } else { 15.0 };
    let n = rng.random_range(2..=MAX_POINTS);
    let kappa = rng.random_range(0.4..1.5);
    let mut centers = vec![[0.0; 3]];
    while centers.len() < n {
        let p = [0, 1, 2].map(|_| rng.random_range(-radius..radius));
        if p.iter().map(|v| v * v).sum::<f64>() <= radius * radius {
            centers.push(p);
        }
    }
    let u = (0..n)
        .map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random::<f64>() })
        .collect();
    Instance {
        centers,
        uncertainty: UncertaintyField::new(u).expect("finite uncertainties"),
        radius,
        kappa,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckRow {
    pub instance: u64,
    pub points: usize,
    pub radius: f64,
    pub kappa: f64,
    pub bnb: f64,
    pub grid: f64,
    pub bnb_seconds: f64,
}

pub fn check_instance(seed: u64, index: u64) -> Result<CheckRow, CliError> {
    let inst = random_instance(seed, index);
    let start = Instant::now();
    let bnb = branch_and_bound(0, inst.radius, &inst.centers, inst.kappa, &inst.uncertainty)?;
    let bnb_seconds = start.elapsed().as_secs_f64();
    let grid = exhaustive_plane_search(
        0,
        inst.radius,
        &inst.centers,
        inst.kappa,
        &inst.uncertainty,
        1f64.to_radians(),
    )?;
    Ok(CheckRow {
        instance: index,
        points: inst.centers.len(),
        radius: inst.radius,
        kappa: inst.kappa,
        bnb: bnb.uncertainty,
        grid: grid.uncertainty,
        bnb_seconds,
    })
}

pub fn check_csv(count: usize, seed: u64) -> Result<String, CliError> {
    let mut out = String::from("instance,points,radius,kappa,bnb_uncertainty,grid_uncertainty,bnb_seconds\n");
    for i in 0..count as u64 {
        let r = check_instance(seed, i)?;
        writeln!(
            out,
            "{},{},{},{},{},{},{:e}",
            r.instance, r.points, r.radius, r.kappa, r.bnb, r.grid, r.bnb_seconds
        )
        .expect("string write");
    }
    Ok(out)
}
