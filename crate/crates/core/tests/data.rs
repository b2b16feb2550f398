use hoi_core::data::augment::{add_noise, augment, hflip, AugmentConfig};
use hoi_core::data::synthetic::{pair_bucket, Bucket, RelationRule, LAYOUT_MARGIN};
use hoi_core::data::{
    annotations_to_json, generate_synthetic_dataset, load_dataset, save_dataset, BBox, Detection, Interaction,
    SceneAnnotation, SyntheticSpec,
};
use hoi_tensor::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sorted(mut v: Vec<Interaction>) -> Vec<Interaction> {
    v.sort();
    v
}

#[test]
fn single_rule_spec_is_deterministic() {
    let spec = SyntheticSpec {
        num_classes: 1,
        num_object_categories: 1,
        scene_count: 3,
        rng_seed: 7,
        relation_rules: vec![RelationRule {
            category: Some(1),
            bucket: Bucket::Adjacent,
            class: 0,
        }],
        class_names: vec!["reach".into()],
        category_names: vec!["box".into()],
        ..Default::default()
    };
    let a = generate_synthetic_dataset(&spec).unwrap();
    let b = generate_synthetic_dataset(&spec).unwrap();
    assert_eq!(a.len(), 3);
    assert_eq!(a, b);
    for s in &a {
        assert!(!s.scene.interactions.is_empty());
        assert!(s.scene.interactions.iter().all(|i| i.class == 0));
    }
}

#[test]
fn empty_spec_gives_no_scenes() {
    let spec = SyntheticSpec {
        scene_count: 0,
        ..Default::default()
    };
    assert!(generate_synthetic_dataset(&spec).unwrap().is_empty());
}

#[test]
fn phone_above_center_is_talking() {
    let spec = SyntheticSpec {
        scene_count: 60,
        ..Default::default()
    };
    let phone = spec.category_names.iter().position(|n| n == "phone").unwrap() as u32 + 1;
    let talk = spec.class_names.iter().position(|n| n == "talk_on_phone").unwrap();
    let mut seen = 0;
    for s in generate_synthetic_dataset(&spec).unwrap() {
        for (hi, h) in s.scene.humans.iter().enumerate() {
            for (oi, o) in s.scene.objects.iter().enumerate() {
                if o.category == phone && pair_bucket(&h.bbox, &o.bbox, LAYOUT_MARGIN) == Some(Bucket::OverlappingUpper) {
                    seen += 1;
                    assert!(s.scene.interactions.contains(&Interaction {
                        human: hi,
                        object: Some(oi),
                        class: talk,
                    }));
                }
            }
        }
    }
    assert!(seen > 0);
}

#[test]
fn flip_examples() {
    // columns 2..5 lit in a width-10 image
    let mut data = vec![0.0; 10 * 4];
    for y in 0..4 {
        for x in 2..5 {
            data[y * 10 + x] = 1.0;
        }
    }
    let image = Tensor::new([1, 4, 10], data).unwrap();
    let scene = SceneAnnotation {
        image_id: "f".into(),
        height: 4,
        width: 10,
        humans: vec![Detection {
            bbox: BBox::new(2.0, 0.0, 5.0, 4.0).unwrap(),
            category: 0,
            confidence: 1.0,
        }],
        objects: vec![],
        interactions: vec![],
    };
    let (img, sc) = hflip(&image, &scene);
    assert_eq!(sc.humans[0].bbox.to_array(), [5.0, 0.0, 8.0, 4.0]);
    let lit: Vec<usize> = (0..10).filter(|&x| img.at(&[0, 0, x]) == 1.0).collect();
    assert_eq!(lit, vec![5, 6, 7]);
    let (back, sc2) = hflip(&img, &sc);
    assert_eq!(back, image);
    assert_eq!(sc2, scene);
}

#[test]
fn zero_noise_is_identity() {
    let s = &generate_synthetic_dataset(&SyntheticSpec { scene_count: 1, ..Default::default() }).unwrap()[0];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(add_noise(&s.image, 0.0, &mut rng), s.image);
}

#[test]
fn dataset_directory_round_trip() {
    let data = generate_synthetic_dataset(&SyntheticSpec { scene_count: 4, ..Default::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&data, dir.path()).unwrap();
    assert_eq!(load_dataset(dir.path()).unwrap(), data);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generation_is_byte_identical(seed in 0u64..1_000_000) {
        let spec = SyntheticSpec { scene_count: 8, rng_seed: seed, ..Default::default() };
        let a = generate_synthetic_dataset(&spec).unwrap();
        let b = generate_synthetic_dataset(&spec).unwrap();
        let scenes = |v: &[hoi_core::data::Sample]| v.iter().map(|s| s.scene.clone()).collect::<Vec<_>>();
        prop_assert_eq!(annotations_to_json(&scenes(&a)), annotations_to_json(&scenes(&b)));
        prop_assert!(a.iter().zip(&b).all(|(x, y)| x.image == y.image));
    }

    #[test]
    fn labels_are_recoverable_from_geometry(seed in 0u64..1_000_000) {
        let spec = SyntheticSpec { scene_count: 8, rng_seed: seed, ..Default::default() };
        for s in generate_synthetic_dataset(&spec).unwrap() {
            let relabeled = spec.label(&s.scene.humans, &s.scene.objects, LAYOUT_MARGIN);
            prop_assert_eq!(relabeled.map(sorted), Some(sorted(s.scene.interactions.clone())));
        }
    }

    #[test]
    fn augmentation_preserves_label_semantics(seed in 0u64..1_000_000) {
        let spec = SyntheticSpec { scene_count: 6, rng_seed: seed, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in generate_synthetic_dataset(&spec).unwrap() {
            for _ in 0..4 {
                let (img, sc) = augment(&s.image, &s.scene, &mut rng, &AugmentConfig::default());
                prop_assert_eq!(img.shape(), s.image.shape());
                prop_assert!(sc.validate().is_ok());
                // transforms may shrink the margin but never cross a boundary
                let relabeled = spec.label(&sc.humans, &sc.objects, 0.0);
                prop_assert_eq!(relabeled.map(sorted), Some(sorted(sc.interactions.clone())));
            }
        }
    }
}

