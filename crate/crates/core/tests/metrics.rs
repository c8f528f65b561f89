mod common;

use proptest::prelude::*;
use sdprior::metrics::{average_precision, chamfer, map_over, map_over_thresholds, MapClass, MapInstance, SceneEval};

fn line(y: f64, n: usize) -> Vec<[f64; 2]> {
    (0..n).map(|i| [i as f64, y]).collect()
}

fn pred(class: MapClass, points: Vec<[f64; 2]>, c: f64) -> MapInstance {
    MapInstance {
        class,
        points,
        confidence: Some(c),
    }
}

#[test]
fn hand_enumerated_tp_fp_tp() {
    let gt = vec![
        MapInstance::gt(MapClass::Boundary, line(0.0, 5)),
        MapInstance::gt(MapClass::Boundary, line(10.0, 5)),
    ];
    let preds = vec![
        pred(MapClass::Boundary, line(0.1, 5), 0.9),
        pred(MapClass::Boundary, line(5.0, 5), 0.8),
        pred(MapClass::Boundary, line(10.2, 5), 0.7),
    ];
    let ap = average_precision(&[SceneEval { preds, gt }], MapClass::Boundary, 0.5)
        .unwrap()
        .unwrap();
    // Precision 1, 1/2, 2/3 at recall 1/2, 1/2, 1: recall levels 0..=0.50
    // interpolate to 1, levels 0.51..=1.00 to 2/3.
    let want = (51.0 + 50.0 * 2.0 / 3.0) / 101.0;
    assert!((ap - want).abs() < 1e-12, "{ap} vs {want}");
}

#[test]
fn uniform_offset_scores_two_thirds() {
    let gt: Vec<MapInstance> = MapClass::ALL
        .iter()
        .enumerate()
        .map(|(i, &c)| MapInstance::gt(c, line(5.0 * i as f64, 10)))
        .collect();
    let preds = gt
        .iter()
        .map(|g| pred(g.class, g.points.iter().map(|p| [p[0], p[1] + 0.7]).collect(), 0.8))
        .collect();
    let r = map_over(&[SceneEval { preds, gt }]).unwrap();
    for c in MapClass::ALL {
        assert_eq!(r.ap(c, 0.5), Some(0.0));
        assert_eq!(r.ap(c, 1.0), Some(1.0));
        assert_eq!(r.ap(c, 1.5), Some(1.0));
    }
    assert!((r.map.unwrap() - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn absent_classes_are_excluded_and_spurious_ones_score_zero() {
    let gt = vec![MapInstance::gt(MapClass::Divider, line(0.0, 4))];
    let preds = vec![
        pred(MapClass::Divider, line(0.0, 4), 0.9),
        pred(MapClass::Centerline, line(3.0, 4), 0.5),
    ];
    let r = map_over(&[SceneEval { preds, gt }]).unwrap();
    assert_eq!(r.class_ap(MapClass::Boundary), None);
    assert_eq!(r.class_ap(MapClass::Centerline), Some(0.0));
    assert_eq!(r.class_ap(MapClass::Divider), Some(1.0));
    assert!((r.map.unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn predictions_never_match_other_scenes() {
    let a = SceneEval {
        preds: vec![pred(MapClass::Divider, line(0.0, 4), 0.9)],
        gt: vec![],
    };
    let b = SceneEval {
        preds: vec![],
        gt: vec![MapInstance::gt(MapClass::Divider, line(0.0, 4))],
    };
    assert_eq!(average_precision(&[a, b], MapClass::Divider, 1.0).unwrap(), Some(0.0));
}

#[test]
fn matches_brute_force_oracle() {
    for seed in 0..10 {
        let scenes = common::random_eval_scenes(20, 5, seed);
        for class in MapClass::ALL {
            for tau in [0.5, 1.0, 1.5] {
                let got = average_precision(&scenes, class, tau).unwrap();
                let want = common::ap_oracle(&scenes, class, tau);
                match (got, want) {
                    (Some(g), Some(w)) => assert!((g - w).abs() < 1e-9, "seed {seed} {class} {tau}: {g} vs {w}"),
                    (g, w) => assert_eq!(g, w),
                }
            }
        }
    }
}

fn pts(n: usize) -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec((-30.0..30.0f64, -15.0..15.0f64).prop_map(|(x, y)| [x, y]), n)
}

proptest! {
    #[test]
    fn chamfer_properties(a in pts(10), b in pts(10), dx in -50.0..50.0f64, dy in -50.0..50.0f64) {
        let ab = chamfer(&a, &b).unwrap();
        prop_assert_eq!(ab, chamfer(&b, &a).unwrap());
        prop_assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(ab, common::chamfer_loop(&a, &b));
        let shift = |v: &[[f64; 2]]| v.iter().map(|p| [p[0] + dx, p[1] + dy]).collect::<Vec<_>>();
        prop_assert!((chamfer(&shift(&a), &shift(&b)).unwrap() - ab).abs() < 1e-9);
    }

    #[test]
    fn ap_ignores_confidence_rescaling(seed in any::<u64>(), k in 0.01..100.0f64) {
        let scenes = common::random_eval_scenes(6, 5, seed);
        let scaled: Vec<SceneEval> = scenes
            .iter()
            .map(|s| SceneEval {
                gt: s.gt.clone(),
                preds: s.preds.iter().map(|p| MapInstance { confidence: p.confidence.map(|c| c * k), ..p.clone() }).collect(),
            })
            .collect();
        prop_assert_eq!(map_over(&scenes).unwrap(), map_over(&scaled).unwrap());
    }

    #[test]
    fn ap_is_monotone_in_threshold(seed in any::<u64>()) {
        let scenes = common::random_eval_scenes(8, 5, seed);
        let taus: Vec<f64> = (1..=12).map(|i| i as f64 * 0.25).collect();
        let r = map_over_thresholds(&scenes, &taus).unwrap();
        for c in MapClass::ALL {
            let v: Vec<f64> = taus.iter().filter_map(|&t| r.ap(c, t)).collect();
            for w in v.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-12, "{:?}: {:?}", c, v);
            }
        }
    }
}
