mod oracle;

use hoi_core::data::{generate_synthetic_dataset, BBox, Detection, Interaction, SceneAnnotation, SyntheticSpec};
use hoi_core::eval::{
    average_precision, evaluate, ground_truth_as_predictions, iou, load_predictions, match_predictions, save_predictions,
    Candidate, GroundTruth, ImagePredictions, MatchPolicy, PairPrediction, Scenario, Setting,
};
use hoi_core::HoiError;
use proptest::prelude::*;

fn bx(a: [f64; 4]) -> BBox {
    BBox::from_array(a).unwrap()
}

fn det(b: [f64; 4], category: u32) -> Detection {
    Detection {
        bbox: bx(b),
        category,
        confidence: 1.0,
    }
}

fn policy(scenario: Scenario, setting: Setting) -> MatchPolicy {
    MatchPolicy {
        scenario,
        setting,
        ..Default::default()
    }
}

#[test]
fn iou_examples() {
    let a = bx([0.0, 0.0, 10.0, 10.0]);
    let b = bx([5.0, 5.0, 15.0, 15.0]);
    assert_eq!(iou(&a, &b), oracle::pixel_iou([0, 0, 10, 10], [5, 5, 15, 15]));
    assert!((iou(&a, &b) - 25.0 / 175.0).abs() < 1e-15);
    assert_eq!(iou(&a, &a), 1.0);
    assert_eq!(iou(&a, &bx([10.0, 0.0, 20.0, 10.0])), 0.0);
}

fn candidate(human: [f64; 4], object: Option<[f64; 4]>, score: f64, pair: usize) -> Candidate {
    Candidate {
        image: 0,
        image_id: "a".into(),
        pair,
        human: bx(human),
        object: object.map(bx),
        score,
    }
}

#[test]
fn matching_examples() {
    let h = [0.0, 0.0, 10.0, 20.0];
    let o = [8.0, 8.0, 14.0, 14.0];
    let gt = [GroundTruth {
        image: 0,
        human: bx(h),
        object: Some(bx(o)),
    }];
    let m = match_predictions(&[candidate(h, Some(o), 0.9, 0)], &gt, &MatchPolicy::default()).unwrap();
    assert_eq!(m, vec![true]);
    // a second identical prediction finds its label taken
    let two = [candidate(h, Some(o), 0.9, 0), candidate(h, Some(o), 0.8, 1)];
    assert_eq!(match_predictions(&two, &gt, &MatchPolicy::default()).unwrap(), vec![true, false]);
    let unsorted = [two[1].clone(), two[0].clone()];
    assert!(matches!(match_predictions(&unsorted, &gt, &MatchPolicy::default()), Err(HoiError::Unsorted(1))));
}

/// One image, one class, one human-only label; the predicted object box
/// decides the outcome under each scenario.
fn divergence(object_box: Option<[f64; 4]>, scenario: Scenario) -> f64 {
    let scene = SceneAnnotation {
        image_id: "a".into(),
        height: 32,
        width: 32,
        humans: vec![det([2.0, 2.0, 12.0, 30.0], 0)],
        objects: vec![det([14.0, 4.0, 20.0, 10.0], 1)],
        interactions: vec![Interaction {
            human: 0,
            object: None,
            class: 0,
        }],
    };
    let preds = vec![ImagePredictions {
        image_id: "a".into(),
        pairs: vec![PairPrediction {
            human_box: [2.0, 2.0, 12.0, 30.0],
            object_box,
            scores: vec![0.7],
        }],
    }];
    evaluate(&preds, &[scene], 1, &policy(scenario, Setting::Default), None).unwrap().map
}

#[test]
fn scenarios_diverge_on_human_only_labels() {
    for empty in [None, Some([0.0; 4])] {
        assert_eq!(divergence(empty, Scenario::S1), 1.0);
        assert_eq!(divergence(empty, Scenario::S2), 1.0);
    }
    let real = Some([14.0, 4.0, 20.0, 10.0]);
    assert_eq!(divergence(real, Scenario::S1), 0.0);
    assert_eq!(divergence(real, Scenario::S2), 1.0);
    assert_eq!(divergence(real, Scenario::None), 0.0);
}

#[test]
fn average_precision_examples() {
    assert_eq!(average_precision(&[true], 1).unwrap(), 1.0);
    assert_eq!(average_precision(&[false, true], 1).unwrap(), 0.5);
    assert_eq!(average_precision(&[], 3).unwrap(), 0.0);
    assert!(average_precision(&[true], 0).is_err());
}

fn two_class_scene() -> SceneAnnotation {
    SceneAnnotation {
        image_id: "a".into(),
        height: 32,
        width: 32,
        humans: vec![det([0.0, 0.0, 10.0, 20.0], 0)],
        objects: vec![det([12.0, 0.0, 20.0, 8.0], 1)],
        interactions: vec![
            Interaction { human: 0, object: Some(0), class: 0 },
            Interaction { human: 0, object: Some(0), class: 1 },
        ],
    }
}

#[test]
fn mean_over_classes() {
    let gt = [two_class_scene()];
    let mut preds = ground_truth_as_predictions(&gt, 2);
    assert_eq!(evaluate(&preds, &gt, 2, &MatchPolicy::default(), None).unwrap().map, 1.0);
    // class 1 ranks a wrong object box above the right one: [FP, TP]
    preds[0].pairs[0].scores = vec![1.0, 0.0];
    preds[0].pairs.push(PairPrediction {
        human_box: [0.0, 0.0, 10.0, 20.0],
        object_box: Some([24.0, 24.0, 30.0, 30.0]),
        scores: vec![0.0, 1.0],
    });
    let r = evaluate(&preds, &gt, 2, &MatchPolicy::default(), None).unwrap();
    assert_eq!(r.classes[0].ap, 1.0);
    assert_eq!(r.classes[1].ap, 0.5);
    assert_eq!(r.map, 0.75);
    // a class without labels is left out of the mean
    let r3 = evaluate(&ground_truth_as_predictions(&gt, 3), &gt, 3, &MatchPolicy::default(), None).unwrap();
    assert_eq!((r3.map, r3.excluded_classes), (1.0, 1));
}

#[test]
fn two_class_ap_values_average() {
    let gt = [two_class_scene()];
    let mut preds = vec![ImagePredictions {
        image_id: "a".into(),
        pairs: vec![PairPrediction {
            human_box: [0.0, 0.0, 10.0, 20.0],
            object_box: Some([12.0, 0.0, 20.0, 8.0]),
            scores: vec![0.9, 0.0],
        }],
    }];
    preds[0].pairs.push(PairPrediction {
        human_box: [20.0, 20.0, 30.0, 30.0],
        object_box: None,
        scores: vec![0.0, 0.9],
    });
    let gt_one = SceneAnnotation {
        interactions: vec![
            Interaction { human: 0, object: Some(0), class: 0 },
            Interaction { human: 0, object: None, class: 1 },
        ],
        ..gt[0].clone()
    };
    // class 1's only prediction has the wrong human: AP 0
    let r = evaluate(&preds, &[gt_one], 2, &MatchPolicy::default(), None).unwrap();
    assert_eq!((r.classes[0].ap, r.classes[1].ap, r.map), (1.0, 0.0, 0.5));
}

#[test]
fn known_setting_drops_images_without_the_object() {
    // image "a" has the class's object; image "b" does not
    let a = SceneAnnotation {
        image_id: "a".into(),
        height: 32,
        width: 32,
        humans: vec![det([0.0, 0.0, 10.0, 20.0], 0)],
        objects: vec![det([12.0, 0.0, 20.0, 8.0], 1)],
        interactions: vec![Interaction { human: 0, object: Some(0), class: 0 }],
    };
    let b = SceneAnnotation {
        image_id: "b".into(),
        height: 32,
        width: 32,
        humans: vec![det([0.0, 0.0, 10.0, 20.0], 0)],
        objects: vec![det([12.0, 0.0, 20.0, 8.0], 2)],
        interactions: vec![],
    };
    let pair = |score: f64| PairPrediction {
        human_box: [0.0, 0.0, 10.0, 20.0],
        object_box: Some([12.0, 0.0, 20.0, 8.0]),
        scores: vec![score],
    };
    let preds = vec![
        ImagePredictions { image_id: "a".into(), pairs: vec![pair(0.5)] },
        ImagePredictions { image_id: "b".into(), pairs: vec![pair(0.9)] },
    ];
    let gt = [a, b];
    let default = evaluate(&preds, &gt, 1, &policy(Scenario::S1, Setting::Default), None).unwrap();
    let known = evaluate(&preds, &gt, 1, &policy(Scenario::S1, Setting::Known), None).unwrap();
    assert_eq!(default.map, 0.5);
    assert_eq!(known.map, 1.0);
    assert!(known.map > default.map);
}

#[test]
fn ground_truth_scores_perfectly_everywhere() {
    let data = generate_synthetic_dataset(&SyntheticSpec { scene_count: 40, ..Default::default() }).unwrap();
    let gt: Vec<_> = data.into_iter().map(|s| s.scene).collect();
    let preds = ground_truth_as_predictions(&gt, 6);
    for scenario in [Scenario::S1, Scenario::S2] {
        for setting in [Setting::Default, Setting::Known] {
            let r = evaluate(&preds, &gt, 6, &policy(scenario, setting), None).unwrap();
            assert_eq!(r.map, 1.0, "{scenario:?} {setting:?}");
        }
    }
}

#[test]
fn prediction_file_round_trip() {
    let gt = [two_class_scene()];
    let preds = ground_truth_as_predictions(&gt, 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    save_predictions(&preds, &path).unwrap();
    assert_eq!(load_predictions(&path).unwrap(), preds);
}

#[test]
fn micro_cases_match_brute_force() {
    for seed in 0..50 {
        let c = oracle::micro_case(seed);
        for (scenario, lenient) in [(Scenario::S1, false), (Scenario::S2, true)] {
            let r = evaluate(&c.preds, std::slice::from_ref(&c.scene), 1, &policy(scenario, Setting::Default), None).unwrap();
            let want = oracle::brute_force_ap(&c.oracle_preds, &c.gts, lenient);
            assert!((r.map - want).abs() < 1e-12, "case {seed} {scenario:?}: {} vs {want}", r.map);
        }
    }
}

proptest! {
    #[test]
    fn ap_depends_only_on_ranking(seed in 0u64..5000, power in 1i32..5, shift in -3.0f64..3.0) {
        let c = oracle::micro_case(seed);
        let mut warped = c.preds.clone();
        for p in &mut warped[0].pairs {
            p.scores[0] = p.scores[0].powi(2 * power - 1) + shift;
        }
        let gt = [c.scene];
        let a = evaluate(&c.preds, &gt, 1, &MatchPolicy::default(), None).unwrap();
        let b = evaluate(&warped, &gt, 1, &MatchPolicy::default(), None).unwrap();
        prop_assert_eq!(a.map, b.map);
    }

    #[test]
    fn s2_never_scores_below_s1(seed in 0u64..5000) {
        let c = oracle::micro_case(seed);
        let gt = [c.scene];
        let s1 = evaluate(&c.preds, &gt, 1, &policy(Scenario::S1, Setting::Default), None).unwrap();
        let s2 = evaluate(&c.preds, &gt, 1, &policy(Scenario::S2, Setting::Default), None).unwrap();
        prop_assert!(s2.map >= s1.map);
    }
}
