use std::f64::consts::PI;

use geoal_core::synth::{generate, ShapeKind, SynthSpec, CORE_FRACTION};

fn histogram(truth: &[u8], classes: usize) -> Vec<usize> {
    let mut h = vec![0; classes];
    for &c in truth {
        h[c as usize] += 1;
    }
    h
}

/// Counts lattice points by class for the layered shape, using doubled
/// integer offsets from the volume center.
fn enumerate_layered(n: usize, radius: f64) -> [usize; 3] {
    let core = CORE_FRACTION * radius;
    let half_width = (0.3 * core).max(0.5);
    let mut counts = [0; 3];
    let c = n as i64 - 1;
    for x in 0..n as i64 {
        for y in 0..n as i64 {
            for z in 0..n as i64 {
                let (dx, dy, dz) = ((2 * x - c) as f64, (2 * y - c) as f64, (2 * z - c) as f64);
                let d2 = (dx * dx + dy * dy + dz * dz) / 4.0;
                let notch = dx / 2.0 >= 0.5 * core && dy.abs() / 2.0 <= half_width && dz.abs() / 2.0 <= half_width;
                let class = if d2 > radius * radius {
                    0
                } else if d2 > core * core || notch {
                    1
                } else {
                    2
                };
                counts[class] += 1;
            }
        }
    }
    counts
}

#[test]
fn layered_histogram_matches_lattice_count_and_shell_volumes() {
    let n = 48;
    let radius = 18.0;
    let mut spec = SynthSpec::new([n, n, n], ShapeKind::Layered, 0.0, 1);
    spec.radius = Some(radius);
    let (_, truth) = generate(&spec).unwrap();
    let h = histogram(truth.data(), 3);
    assert_eq!(h, enumerate_layered(n, radius).to_vec());

    let core = CORE_FRACTION * radius;
    let ball = |r: f64| 4.0 / 3.0 * PI * r.powi(3);
    let inside = (h[1] + h[2]) as f64;
    assert!((inside - ball(radius)).abs() / ball(radius) < 0.01, "{inside} vs {}", ball(radius));
    // the notch removes part of the core, never more than its bounding box
    let notch_box = 0.5 * core * (0.6 * core).powi(2);
    let core_voxels = h[2] as f64;
    assert!(core_voxels < ball(core));
    assert!(core_voxels > ball(core) - notch_box - 0.05 * ball(core));
}

#[test]
fn noiseless_sphere_has_exactly_two_levels() {
    let spec = SynthSpec::new([20, 20, 20], ShapeKind::Sphere, 0.0, 3);
    let (v, t) = generate(&spec).unwrap();
    for (&x, &c) in v.data().iter().zip(t.data()) {
        assert_eq!(x, c as f32);
    }
    let h = histogram(t.data(), 2);
    assert!(h[0] > 0 && h[1] > 0);
}

#[test]
fn two_blobs_are_disjoint_and_equal() {
    let spec = SynthSpec::new([40, 20, 20], ShapeKind::TwoBlob, 0.0, 0);
    let (_, t) = generate(&spec).unwrap();
    let (mut left, mut right) = (0, 0);
    for (i, &c) in t.data().iter().enumerate() {
        if c == 1 {
            if i % 40 < 20 {
                left += 1;
            } else {
                right += 1;
            }
        }
    }
    assert!(left > 0);
    assert_eq!(left, right);
    // the middle plane stays background
    for z in 0..20 {
        for y in 0..20 {
            assert_eq!(t.get(19, y, z) + t.get(20, y, z), 0);
        }
    }
}
