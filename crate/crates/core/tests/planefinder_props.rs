use std::f64::consts::PI;

use geoal_core::geomgraph::UncertaintyField;
use geoal_core::planefinder::{
    branch_and_bound, branch_and_bound_with_stats, corridor_uncertainty, exhaustive_plane_search, patch_members,
    plane_uncertainty, select_best_patch, Corridor, Plane,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_instance(seed: u64, n: usize, r: f64) -> (Vec<[f64; 3]>, UncertaintyField) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![[0.0; 3]];
    while centers.len() < n {
        let p = [
            rng.random_range(-r..r),
            rng.random_range(-r..r),
            rng.random_range(-r..r),
        ];
        if p.iter().map(|v| v * v).sum::<f64>().sqrt() <= r {
            centers.push(p);
        }
    }
    let u = (0..n)
        .map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random::<f64>() })
        .collect();
    (centers, UncertaintyField::new(u).unwrap())
}

fn plane_value(centers: &[[f64; 3]], u: &UncertaintyField, r: f64, kappa: f64, phi: f64, gamma: f64) -> Option<f64> {
    let plane = Plane::new(centers[0], phi, gamma).ok()?;
    Some(plane_uncertainty(&patch_members(0, r, &plane, centers, kappa), u))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn corridor_bounds_every_interior_plane(
        seed in any::<u64>(),
        n in 2usize..80,
        kappa in 0.2f64..2.0,
        p0 in 0.0f64..PI, pw in 1e-4f64..1.6,
        g0 in 0.0f64..PI, gw in 1e-4f64..1.6,
        fractions in proptest::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 8),
    ) {
        let r = 10.0;
        let (centers, u) = random_instance(seed, n, r);
        let corridor = Corridor::new(p0, (p0 + pw).min(PI), g0, (g0 + gw).min(PI)).unwrap();
        let bound = corridor_uncertainty(&corridor, 0, r, &centers, kappa, &u);
        let [pa, pb] = corridor.phi();
        let [ga, gb] = corridor.gamma();
        for (fp, fg) in fractions {
            if let Some(v) = plane_value(&centers, &u, r, kappa, pa + fp * (pb - pa), ga + fg * (gb - ga)) {
                prop_assert!(v <= bound + 1e-9, "plane {v} above corridor bound {bound}");
            }
        }
    }

    #[test]
    fn popped_bounds_never_increase(seed in any::<u64>(), n in 2usize..120, kappa in 0.2f64..1.5) {
        let (centers, u) = random_instance(seed, n, 12.0);
        let (_, stats) = branch_and_bound_with_stats(0, 12.0, &centers, kappa, &u).unwrap();
        for pair in stats.popped.windows(2) {
            prop_assert!(pair[1] <= pair[0] + 1e-12);
        }
    }

    #[test]
    fn members_follow_points_under_relabeling(seed in any::<u64>(), n in 2usize..60, phi in 0.0f64..3.1, gamma in 0.0f64..1.5) {
        let (centers, _) = random_instance(seed, n, 8.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let mut shuffled = vec![[0.0; 3]; n];
        for (old, &new) in perm.iter().enumerate() {
            shuffled[new] = centers[old];
        }
        let plane = Plane::new(centers[0], phi, gamma).unwrap();
        let mut a: Vec<usize> = patch_members(0, 8.0, &plane, &centers, 0.7).into_iter().map(|j| perm[j]).collect();
        a.sort_unstable();
        let b = patch_members(perm[0], 8.0, &plane, &shuffled, 0.7);
        prop_assert_eq!(a, b);
    }
}

#[test]
fn branch_and_bound_never_loses_to_the_degree_grid() {
    let step = 1f64.to_radians();
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..=200);
        let r = if seed % 2 == 0 { 10.0 } else { 15.0 };
        let kappa = rng.random_range(0.4..1.5);
        let (centers, u) = random_instance(seed, n, r);
        let bnb = branch_and_bound(0, r, &centers, kappa, &u).unwrap();
        let grid = exhaustive_plane_search(0, r, &centers, kappa, &u, step).unwrap();
        assert!(
            bnb.uncertainty >= grid.uncertainty - 1e-9,
            "seed {seed}: bnb {} < grid {}",
            bnb.uncertainty,
            grid.uncertainty
        );
    }
}

#[test]
fn one_hot_neighbour_agrees_with_grid() {
    let centers = [[0.0; 3], [2.0, 5.0, -3.0], [7.0, 0.0, 1.0], [0.0, -6.0, 0.0]];
    let u = UncertaintyField::new(vec![0.3, 2.0, 0.0, 0.0]).unwrap();
    let bnb = branch_and_bound(0, 10.0, &centers, 0.5, &u).unwrap();
    let grid = exhaustive_plane_search(0, 10.0, &centers, 0.5, &u, 1f64.to_radians()).unwrap();
    assert!((bnb.uncertainty - 2.3).abs() < 1e-12);
    assert_eq!(bnb.uncertainty, grid.uncertainty);
    assert!(bnb.members.contains(&1));
}

#[test]
fn all_centers_equals_brute_force_over_centers() {
    let (centers, u) = random_instance(7, 30, 6.0);
    let best = select_best_patch(&u, centers.len(), 4.0, &centers, 0.6).unwrap();
    let brute = (0..centers.len())
        .map(|i| branch_and_bound(i, 4.0, &centers, 0.6, &u).unwrap())
        .fold(None::<geoal_core::planefinder::PatchQuery>, |acc, q| match acc {
            Some(b) if b.uncertainty >= q.uncertainty => Some(b),
            _ => Some(q),
        })
        .unwrap();
    assert_eq!(best.center, brute.center);
    assert_eq!(best.uncertainty, brute.uncertainty);
    let single = select_best_patch(&u, 1, 4.0, &centers, 0.6).unwrap();
    let top = (0..u.len()).fold(0, |b, i| if u.as_slice()[i] > u.as_slice()[b] { i } else { b });
    assert_eq!(single, branch_and_bound(top, 4.0, &centers, 0.6, &u).unwrap());
}
