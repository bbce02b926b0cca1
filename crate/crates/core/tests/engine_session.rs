use std::collections::HashSet;
use std::sync::Arc;

use geoal_core::engine::{
    oracle_answer, run_experiment, run_repeat, ALSession, EngineConfig, PreparedDataset, Query, Strategy,
};
use geoal_core::synth::{build_dataset, ShapeKind, SynthSpec};
use geoal_core::volume::{Dataset, LabelSet};
use geoal_core::Error;

fn small_volume(shape: ShapeKind, dims: [usize; 3], cell: usize, seed: u64) -> Arc<PreparedDataset> {
    let mut spec = SynthSpec::new(dims, shape, 0.3, seed);
    spec.cell = cell;
    let (ds, _) = build_dataset(&spec).unwrap();
    Arc::new(PreparedDataset::new(ds, 6, 0).unwrap())
}

fn quick_config(budget: usize) -> EngineConfig {
    let mut cfg = EngineConfig {
        budget: Some(budget),
        radius: 6.0,
        seeds_per_class: 2,
        ..EngineConfig::default()
    };
    cfg.boost.rounds = 20;
    cfg
}

fn tabular(points: &[(f64, usize)]) -> Dataset {
    let features = points.iter().map(|&(x, _)| vec![x, -x]).collect();
    let truth = points.iter().map(|&(_, c)| c).collect();
    Dataset::tabular(features, truth, LabelSet::numbered(2).unwrap()).unwrap()
}

/// Drives a session by hand, checking the ledger after every answer.
fn drive(prepared: &Arc<PreparedDataset>, strategy: &str, cfg: &EngineConfig, seed: u64) -> Vec<Query> {
    let mut session = ALSession::new(Arc::clone(prepared), strategy.parse().unwrap(), cfg.clone(), seed, 0).unwrap();
    session.seed_from_ground_truth().unwrap();
    let truth = &prepared.dataset().ground_truth;
    let mut asked = HashSet::new();
    let mut spent = 0;
    let mut queries = Vec::new();
    loop {
        session.retrain().unwrap();
        if session.remaining() == 0 {
            break;
        }
        let Some(q) = session.next_query().unwrap() else { break };
        for &m in q.members() {
            assert!(session.label(m).is_none(), "{m} is already labeled");
            assert!(asked.insert(m), "{m} queried twice");
        }
        let answer = oracle_answer(&q, truth).unwrap();
        if answer.cost > session.remaining() {
            break;
        }
        session.apply(&answer.labels, answer.cost).unwrap();
        spent += answer.cost;
        assert_eq!(session.inputs_spent(), spent);
        assert!(spent <= session.budget());
        assert_eq!(session.labeled_count() + session.unlabeled_count(), prepared.pool().len());
        queries.push(q);
    }
    queries
}

#[test]
fn ledger_and_no_repeat_queries_hold_for_every_kind_of_strategy() {
    let prepared = small_volume(ShapeKind::Sphere, [24, 24, 24], 3, 1);
    let cfg = quick_config(20);
    for name in ["Rand", "FEnt", "CEntS", "pRand", "pFEnt", "p*CEnt", "MaxError", "Boundary"] {
        let queries = drive(&prepared, name, &cfg, 9);
        assert!(!queries.is_empty(), "{name} asked nothing");
    }
}

#[test]
fn binary_entropy_and_margin_strategies_ask_the_same_questions() {
    let prepared = small_volume(ShapeKind::Sphere, [24, 24, 24], 3, 2);
    let cfg = quick_config(15);
    let ent = drive(&prepared, "FEnt", &cfg, 4);
    assert_eq!(ent, drive(&prepared, "FMnMx", &cfg, 4));
    assert_eq!(ent, drive(&prepared, "FMnMar", &cfg, 4));
}

#[test]
fn repeats_are_deterministic() {
    let prepared = small_volume(ShapeKind::Layered, [24, 24, 24], 3, 3);
    let cfg = quick_config(12);
    let strategy: Strategy = "CEnt".parse().unwrap();
    let a = run_experiment(&prepared, strategy, &cfg, 3, 77).unwrap();
    let b = run_experiment(&prepared, strategy, &cfg, 3, 77).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.curves[1], run_repeat(&prepared, strategy, &cfg, 77, 1).unwrap());
    let c = run_experiment(&prepared, strategy, &cfg, 3, 78).unwrap();
    assert_ne!(a.curves, c.curves);
}

#[test]
fn zero_budget_records_only_the_seeded_model() {
    let prepared = small_volume(ShapeKind::Sphere, [16, 16, 16], 4, 4);
    let curve = run_repeat(&prepared, "FEnt".parse().unwrap(), &quick_config(0), 1, 0).unwrap();
    assert_eq!(curve.len(), 1);
    assert_eq!(curve[0].inputs, 0);
}

#[test]
fn exhausted_pool_stops_early() {
    let points: Vec<(f64, usize)> = (0..24).map(|i| (i as f64, usize::from(i >= 12))).collect();
    let prepared = Arc::new(PreparedDataset::new(tabular(&points), 3, 5).unwrap());
    let cfg = quick_config(100);
    let curve = run_repeat(&prepared, "Rand".parse().unwrap(), &cfg, 2, 0).unwrap();
    let pool = prepared.pool().len();
    let seeded = 2 * cfg.seeds_per_class;
    assert_eq!(curve.len(), pool - seeded + 1);
    assert_eq!(curve.last().unwrap().inputs, pool - seeded);
}

#[test]
fn seeding_needs_enough_samples_of_every_class() {
    let points: Vec<(f64, usize)> = (0..12).map(|i| (i as f64, usize::from(i >= 10))).collect();
    let prepared = Arc::new(PreparedDataset::from_split(tabular(&points), (0..11).collect(), vec![11], 3).unwrap());
    let mut session = ALSession::new(prepared, "Rand".parse().unwrap(), quick_config(10), 0, 0).unwrap();
    assert!(session.seed_from_ground_truth().is_err());
}

#[test]
fn geometry_strategies_are_rejected_on_feature_only_data() {
    let points: Vec<(f64, usize)> = (0..20).map(|i| (i as f64, usize::from(i >= 10))).collect();
    let prepared = Arc::new(PreparedDataset::new(tabular(&points), 3, 0).unwrap());
    for name in ["CEnt", "pFEnt", "p*FEnt", "Boundary"] {
        let err = ALSession::new(Arc::clone(&prepared), name.parse().unwrap(), quick_config(10), 0, 0).err();
        assert!(matches!(err, Some(Error::UnsupportedStrategy { .. })), "{name}");
    }
    assert!(ALSession::new(prepared, "MaxError".parse().unwrap(), quick_config(10), 0, 0).is_ok());
}

#[test]
fn optimal_planes_need_a_volume() {
    let prepared = small_volume(ShapeKind::Sphere, [32, 32, 1], 2, 5);
    let err = ALSession::new(prepared, "p*FEnt".parse().unwrap(), quick_config(10), 0, 0).err();
    assert!(matches!(err, Some(Error::UnsupportedStrategy { .. })));
}

#[test]
fn planar_patches_take_the_nearest_neighbours() {
    let prepared = small_volume(ShapeKind::Layered, [40, 40, 1], 2, 6);
    let mut session = ALSession::new(Arc::clone(&prepared), "pCEnt".parse().unwrap(), quick_config(10), 0, 0).unwrap();
    session.seed_from_ground_truth().unwrap();
    session.retrain().unwrap();
    let Some(Query::Patch { center, plane, members, .. }) = session.next_query().unwrap() else {
        panic!("expected a patch");
    };
    assert!(plane.is_none());
    assert_eq!(members.len(), 8);
    assert!(members.contains(&center));
    let sv = &prepared.dataset().supervoxels;
    let dist = |g: usize| {
        let (a, b) = (sv[g].center, sv[center].center);
        (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>()
    };
    let farthest = members.iter().map(|&g| dist(g)).fold(0.0, f64::max);
    let closer_left_out = prepared
        .pool()
        .iter()
        .filter(|g| !members.contains(g) && session.label(**g).is_none())
        .any(|&g| dist(g) < farthest);
    assert!(!closer_left_out);
}

#[test]
fn max_error_asks_for_the_confident_mistake() {
    // class 1 lives at x >= 10, except one outlier that looks like class 0
    let mut points: Vec<(f64, usize)> = (0..10).map(|i| (i as f64 * 0.1, 0)).collect();
    points.extend((0..10).map(|i| (10.0 + i as f64 * 0.1, 1)));
    points.push((0.45, 1));
    let outlier = points.len() - 1;
    let test = vec![0, 10];
    let pool: Vec<usize> = (1..points.len()).filter(|i| !test.contains(i)).collect();
    let prepared = Arc::new(PreparedDataset::from_split(tabular(&points), pool, test, 3).unwrap());
    let mut session = ALSession::new(prepared, "MaxError".parse().unwrap(), quick_config(5), 0, 0).unwrap();
    session.seed_with(&[(1, 0), (2, 0), (11, 1), (12, 1)]).unwrap();
    session.retrain().unwrap();
    assert_eq!(session.predicted_class(outlier), Some(0));
    assert_eq!(session.next_query().unwrap(), Some(Query::Single { id: outlier }));

}

#[test]
fn max_error_without_mistakes_falls_back_to_random() {
    let mut points: Vec<(f64, usize)> = (0..10).map(|i| (i as f64 * 0.1, 0)).collect();
    points.extend((0..10).map(|i| (10.0 + i as f64 * 0.1, 1)));
    let prepared = Arc::new(PreparedDataset::from_split(tabular(&points), (1..19).collect(), vec![0, 19], 3).unwrap());
    let mut seen = HashSet::new();
    for seed in 0..20 {
        let mut s =
            ALSession::new(Arc::clone(&prepared), "MaxError".parse().unwrap(), quick_config(5), seed, 0).unwrap();
        s.seed_with(&[(1, 0), (2, 0), (11, 1), (12, 1)]).unwrap();
        s.retrain().unwrap();
        assert!(prepared.pool().iter().all(|&g| s.predicted_class(g) == Some(points[g].1)));
        let q = s.next_query().unwrap().unwrap();
        assert!(s.label(q.center()).is_none());
        seen.insert(q.center());
    }
    assert!(seen.len() > 1, "fallback should be random, got {seen:?}");
}

#[test]
fn boundary_picks_nodes_next_to_a_class_change() {
    let prepared = small_volume(ShapeKind::Sphere, [24, 24, 24], 3, 7);
    let graph = prepared.graph().unwrap();
    for seed in 0..5 {
        let mut s =
            ALSession::new(Arc::clone(&prepared), "Boundary".parse().unwrap(), quick_config(10), seed, 0).unwrap();
        s.seed_from_ground_truth().unwrap();
        s.retrain().unwrap();
        let q = s.next_query().unwrap().unwrap();
        let local = prepared.local(q.center()).unwrap();
        let own = s.predicted_class(q.center()).unwrap();
        let differs = graph
            .neighbors(local)
            .iter()
            .any(|&(j, _)| s.predicted_class(prepared.pool()[j]) != Some(own));
        assert!(differs);
    }
}

#[test]
fn apply_rejects_overspending_and_foreign_ids() {
    let prepared = small_volume(ShapeKind::Sphere, [16, 16, 16], 4, 8);
    let mut s = ALSession::new(Arc::clone(&prepared), "Rand".parse().unwrap(), quick_config(3), 0, 0).unwrap();
    let g = prepared.pool()[0];
    assert!(s.apply(&[(g, 0)], 4).is_err());
    assert!(s.apply(&[(prepared.test()[0], 0)], 1).is_err());
    assert!(s.apply(&[(g, 9)], 1).is_err());
    assert_eq!(s.inputs_spent(), 0);
    assert_eq!(s.apply(&[(g, 1)], 2).unwrap(), 1);
    assert_eq!(s.apply(&[(g, 0)], 1).unwrap(), 0);
    assert_eq!(s.label(g), Some(0));
    assert_eq!(s.remaining(), 0);
}

#[test]
fn queries_before_training_are_an_error() {
    let prepared = small_volume(ShapeKind::Sphere, [16, 16, 16], 4, 9);
    let mut s = ALSession::new(prepared, "FEnt".parse().unwrap(), quick_config(3), 0, 0).unwrap();
    assert!(s.next_query().is_err());
}
