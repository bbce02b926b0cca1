use geoal_core::classifier::{adaptive_threshold, gaussian_crossing, scores_to_probs, ScoreVector, ThresholdVector};
use geoal_core::engine::{metric, MetricKind};
use geoal_core::geomgraph::{
    build_graph, combined_uncertainty, entropy_field, geometric_uncertainty, propagate, NeighborGraph,
    ProbabilityField, UncertaintyField,
};
use geoal_core::synth::{propagation_toy, toy_mask, TOY_NOTCH, TOY_SIDE};
use geoal_core::uncertainty::{
    argmax_lowest, conditional_entropy, selection_entropy, total_entropy, ClassProbabilities, UncertaintyMeasure,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn simplex(raw: &[f64]) -> Vec<f64> {
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

fn random_field(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> ProbabilityField {
    let rows = (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..classes).map(|_| rng.random::<f64>() + 1e-3).collect();
            ClassProbabilities::new(simplex(&raw)).unwrap()
        })
        .collect();
    ProbabilityField::new(rows).unwrap()
}

fn matrix_power_oracle(graph: &NeighborGraph, p0: &ProbabilityField, steps: usize) -> Vec<Vec<f64>> {
    let t = graph.dense_transition();
    let mut p: Vec<Vec<f64>> = p0.rows().map(<[f64]>::to_vec).collect();
    for _ in 0..steps {
        p = (0..p.len())
            .map(|i| {
                (0..p0.classes())
                    .map(|c| (0..p.len()).map(|j| t[i][j] * p[j][c]).sum())
                    .collect()
            })
            .collect();
    }
    p
}

proptest! {
    #[test]
    fn probabilities_from_scores_form_a_distribution(
        scores in proptest::collection::vec(-50.0f64..50.0, 2..6),
        shift in -5.0f64..5.0,
    ) {
        let h = ThresholdVector(vec![shift; scores.len()]);
        let p = scores_to_probs(&ScoreVector(scores.clone()), &h);
        let sum: f64 = p.as_slice().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(p.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert_eq!(Some(p.argmax()), argmax_lowest(scores.iter().copied()));
    }

    #[test]
    fn entropies_are_bounded(raw in proptest::collection::vec(0.0f64..1.0, 2..7)) {
        prop_assume!(raw.iter().sum::<f64>() > 1e-6);
        let p = simplex(&raw);
        let n = p.len() as f64;
        let t = total_entropy(&p);
        prop_assert!(t >= 0.0 && t <= n.log2() + 1e-12);
        let s = selection_entropy(&p);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&s));
        let c = conditional_entropy(&p);
        prop_assert!(c >= 0.0 && c <= (n - 1.0).log2().max(0.0) + 1.0 + 1e-12);
    }

    #[test]
    fn threshold_is_translation_equivariant(
        pos in proptest::collection::vec(-5.0f64..5.0, 2..20),
        neg in proptest::collection::vec(-5.0f64..5.0, 2..20),
        c in -100.0f64..100.0,
    ) {
        let h = adaptive_threshold(&pos, &neg).unwrap();
        let pos_c: Vec<f64> = pos.iter().map(|v| v + c).collect();
        let neg_c: Vec<f64> = neg.iter().map(|v| v + c).collect();
        let hc = adaptive_threshold(&pos_c, &neg_c).unwrap();
        prop_assert!((hc - (h + c)).abs() < 1e-6 * (1.0 + h.abs() + c.abs()), "{hc} vs {h} + {c}");
    }

    #[test]
    fn crossing_equalizes_the_two_densities(
        mp in -5.0f64..5.0, sp in 0.1f64..3.0, gap in 0.5f64..5.0, sn in 0.1f64..3.0,
    ) {
        let mn = mp - gap;
        let h = gaussian_crossing(mp, sp, mn, sn);
        let log_pdf = |x: f64, m: f64, s: f64| -((x - m) / s).powi(2) / 2.0 - s.ln();
        prop_assert!((log_pdf(h, mp, sp) - log_pdf(h, mn, sn)).abs() < 1e-8);
    }

    #[test]
    fn metrics_are_bounded_and_dice_dominates_iou(
        pairs in proptest::collection::vec((0usize..3, 0usize..3), 1..60),
    ) {
        let (pred, truth): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        for kind in [MetricKind::Iou, MetricKind::Dice, MetricKind::AvgPrecision, MetricKind::Accuracy] {
            let v = metric(&pred, &truth, kind, 3).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let iou = metric(&pred, &truth, MetricKind::Iou, 3).unwrap();
        let dice = metric(&pred, &truth, MetricKind::Dice, 3).unwrap();
        prop_assert!(dice >= iou - 1e-15);
    }

    #[test]
    fn propagation_composes(seed in any::<u64>(), n in 3usize..30, a in 0usize..8, b in 0usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers: Vec<[f64; 3]> = (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let graph = build_graph(&centers, 2).unwrap();
        let p0 = random_field(&mut rng, n, 3);
        let two_step = propagate(&graph, &propagate(&graph, &p0, a).unwrap(), b).unwrap();
        let one_step = propagate(&graph, &p0, a + b).unwrap();
        for (x, y) in two_step.rows().zip(one_step.rows()) {
            for (u, v) in x.iter().zip(y) {
                prop_assert!((u - v).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn propagation_matches_matrix_power() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let n = rng.random_range(2..=50);
        let k = rng.random_range(1..=5usize).min(n - 1);
        let steps = rng.random_range(0..=20);
        let classes = rng.random_range(2..=4);
        let centers: Vec<[f64; 3]> = (0..n)
            .map(|_| [rng.random_range(0.0..10.0), rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)])
            .collect();
        let graph = build_graph(&centers, k).unwrap();
        let p0 = random_field(&mut rng, n, classes);
        let fast = propagate(&graph, &p0, steps).unwrap();
        let oracle = matrix_power_oracle(&graph, &p0, steps);
        for (row, expected) in fast.rows().zip(&oracle) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-8);
            for (a, b) in row.iter().zip(expected) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn consensus_is_a_fixed_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let centers: Vec<[f64; 3]> = (0..25).map(|_| [rng.random(), rng.random(), 0.0]).collect();
    let graph = build_graph(&centers, 4).unwrap();
    let same = ProbabilityField::new(vec![ClassProbabilities::new(vec![0.2, 0.5, 0.3]).unwrap(); 25]).unwrap();
    let out = propagate(&graph, &same, 17).unwrap();
    for row in out.rows() {
        for (a, b) in row.iter().zip([0.2, 0.5, 0.3]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_geometric_field_keeps_feature_ranking() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let field = random_field(&mut rng, 40, 3);
    let feature = entropy_field(&field, UncertaintyMeasure::TotalEntropy).unwrap();
    let combined = combined_uncertainty(&feature, &UncertaintyField::zeros(40)).unwrap();
    assert_eq!(combined, feature);
}

#[test]
fn binary_rankings_of_entropy_and_margins_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let pool: Vec<[f64; 2]> = (0..10_000)
        .map(|_| {
            let q: f64 = rng.random();
            [q, 1.0 - q]
        })
        .collect();
    let rank = |m: UncertaintyMeasure| {
        let scores: Vec<f64> = pool.iter().map(|p| m.selection_score(p)).collect();
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        order
    };
    let ent = rank(UncertaintyMeasure::TotalEntropy);
    assert_eq!(ent, rank(UncertaintyMeasure::MinMax));
    assert_eq!(ent, rank(UncertaintyMeasure::MinMargin));
}

#[test]
fn toy_boundary_notch_is_most_uncertain() {
    let toy = propagation_toy();
    let walked = propagate(&toy.graph, &toy.field, 4).unwrap();
    let u = geometric_uncertainty(&walked, UncertaintyMeasure::TotalEntropy).unwrap();
    let u = u.as_slice();
    let best = argmax_lowest(u.iter().copied()).unwrap();
    assert!(TOY_NOTCH.contains(&best), "argmax at {best}");
    // 0.99992 bits at the notch, from an independent matrix-power evaluation
    assert!((u[best] - 0.999_92).abs() < 1e-4);

    let mask = toy_mask();
    let n = TOY_SIDE as i64;
    for i in 0..TOY_SIDE * TOY_SIDE {
        let (r, c) = ((i / TOY_SIDE) as i64, (i % TOY_SIDE) as i64);
        let own = mask[r as usize][c as usize];
        let steps = (0..n * n)
            .filter(|&j| mask[(j / n) as usize][(j % n) as usize] != own)
            .map(|j| (j / n - r).abs() + (j % n - c).abs())
            .min()
            .unwrap();
        if steps >= 5 {
            assert!(u[i] < 1e-6, "pixel {i} at distance {steps} has {}", u[i]);
        }
    }
}
