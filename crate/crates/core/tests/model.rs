mod oracle;

use hoi_core::backbone::{baseline_fuse, feature_region, global_context, FeatureMap};
use hoi_core::check::{model_check, op_suite};
use hoi_core::config::{GuidanceMode, LossConfig, ModelConfig};
use hoi_core::data::{BBox, Detection, Interaction, SceneAnnotation};
use hoi_core::layers::Linear;
use hoi_core::model::{enumerate_pairs, ForwardOptions, Model};
use hoi_core::params::ParamStore;
use hoi_core::train::TrainConfig;
use hoi_tensor::{Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn det(b: [f64; 4], category: u32, confidence: f64) -> Detection {
    Detection {
        bbox: BBox::from_array(b).unwrap(),
        category,
        confidence,
    }
}

fn image(seed: u64, c: usize, s: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new([c, s, s], (0..c * s * s).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

fn two_pair_scene() -> SceneAnnotation {
    SceneAnnotation {
        image_id: "g".into(),
        height: 64,
        width: 64,
        humans: vec![det([10.0, 8.0, 26.0, 40.0], 0, 0.9)],
        objects: vec![det([20.0, 12.0, 30.0, 20.0], 2, 0.8)],
        interactions: vec![Interaction {
            human: 0,
            object: Some(0),
            class: 1,
        }],
    }
}

fn busy_scene() -> SceneAnnotation {
    SceneAnnotation {
        image_id: "b".into(),
        height: 64,
        width: 64,
        humans: vec![det([4.0, 4.0, 20.0, 36.0], 0, 0.9), det([36.0, 30.0, 60.0, 42.0], 0, 0.7)],
        objects: vec![
            det([14.0, 6.0, 22.0, 12.0], 1, 0.8),
            det([40.0, 40.0, 48.0, 48.0], 3, 0.5),
            det([2.0, 50.0, 10.0, 60.0], 4, 0.4),
        ],
        interactions: vec![],
    }
}

fn zero_biases(store: &mut ParamStore) {
    for id in store.ids().collect::<Vec<_>>() {
        if store.name(id).ends_with(".bias") {
            let shape = store.get(id).shape().to_vec();
            *store.get_mut(id) = Tensor::zeros(shape);
        }
    }
}

#[test]
fn backbone_shapes_and_zero_input() {
    let mut model = Model::new(ModelConfig::default()).unwrap();
    let mut t = Tape::new();
    let p = model.params.bind(&mut t, false);
    let img = t.constant(image(1, 3, 64));
    let f = model.backbone.forward(&mut t, &p, img).unwrap();
    // (64 + 2 - 3) / 2 + 1 = 32, then 16, then 8
    assert_eq!(t.shape(f.var), &[64, 8, 8]);
    assert_eq!(f.scale, 0.125);
    let again = model.backbone.forward(&mut t, &p, img).unwrap();
    assert_eq!(t.value(f.var), t.value(again.var));

    zero_biases(&mut model.params);
    let mut t = Tape::new();
    let p = model.params.bind(&mut t, false);
    let img = t.constant(Tensor::zeros([3, 64, 64]));
    let f = model.backbone.forward(&mut t, &p, img).unwrap();
    assert!(t.value(f.var).data().iter().all(|&v| v == 0.0));
}

fn map_var(t: &mut Tape, data: Tensor) -> FeatureMap {
    let (c, h, w) = (data.shape()[0], data.shape()[1], data.shape()[2]);
    FeatureMap {
        var: t.constant(data),
        channels: c,
        height: h,
        width: w,
        scale: 0.125,
    }
}

#[test]
fn entity_vectors() {
    let model = Model::new(ModelConfig::default()).unwrap();
    let enc = &model.human_encoder;
    let boxes = [
        BBox::new(0.0, 0.0, 16.0, 16.0).unwrap(),
        BBox::new(30.0, 20.0, 62.0, 60.0).unwrap(),
        BBox::new(7.0, 50.0, 9.0, 53.0).unwrap(),
    ];
    let mut t = Tape::new();
    let p = model.params.bind(&mut t, false);
    let f = map_var(&mut t, Tensor::full([64, 8, 8], 0.7));
    let v = enc.forward(&mut t, &p, &f, &boxes).unwrap();
    let v = t.value(v).data().to_vec();
    assert_eq!(v.len(), 3 * 64);
    for b in 1..3 {
        for j in 0..64 {
            assert!((v[j] - v[b * 64 + j]).abs() < 1e-12);
        }
    }

    // left half 1, right half 5 in every channel
    let patch: Vec<f64> = (0..64 * 64).map(|i| if i % 8 < 4 { 1.0 } else { 5.0 }).collect();
    let f = map_var(&mut t, Tensor::new([64, 8, 8], patch).unwrap());
    let left = BBox::new(0.0, 0.0, 32.0, 64.0).unwrap();
    let right = BBox::new(32.0, 0.0, 64.0, 64.0).unwrap();
    let v = enc.forward(&mut t, &p, &f, &[left, right, left]).unwrap();
    let v = t.value(v).data().to_vec();
    assert_ne!(v[..64], v[64..128]);
    assert_eq!(v[..64], v[128..]);
}

proptest! {
    #[test]
    fn entity_vector_reads_only_its_region(seed in 0u64..1000, x in 0.0f64..48.0, y in 0.0f64..48.0, w in 1.0f64..16.0, h in 1.0f64..16.0) {
        let model = Model::new(ModelConfig { feature_dim: 8, backbone_channels: vec![4, 4, 4], ..Default::default() }).unwrap();
        let b = BBox::new(x, y, x + w, y + h).unwrap();
        let r = feature_region(&b, 0.125, 8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let full: Vec<f64> = (0..4 * 64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let masked: Vec<f64> = full
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let (cy, cx) = (((i / 8) % 8) as f64, (i % 8) as f64);
                let touches = cx + 1.0 > r[0] && cx < r[2] && cy + 1.0 > r[1] && cy < r[3];
                if touches { v } else { 0.0 }
            })
            .collect();
        let mut t = Tape::new();
        let p = model.params.bind(&mut t, false);
        let a = map_var(&mut t, Tensor::new([4, 8, 8], full).unwrap());
        let m = map_var(&mut t, Tensor::new([4, 8, 8], masked).unwrap());
        let va = model.human_encoder.forward(&mut t, &p, &a, &[b]).unwrap();
        let vm = model.human_encoder.forward(&mut t, &p, &m, &[b]).unwrap();
        prop_assert_eq!(t.value(va), t.value(vm));
    }
}

#[test]
fn global_context_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = ParamStore::new();
    let proj = Linear::new(&mut store, &mut rng, "g", 2, 2);
    *store.get_mut(proj.weight) = Tensor::new([2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    *store.get_mut(proj.bias) = Tensor::zeros([2]);
    let mut t = Tape::new();
    let p = store.bind(&mut t, false);
    let f = map_var(&mut t, Tensor::new([2, 2, 2], vec![0.0, 2.0, 1.0, 1.0, 3.0, 3.0, 2.0, 4.0]).unwrap());
    let g = global_context(&mut t, &p, &proj, &f).unwrap();
    assert_eq!(t.value(g).data(), &[1.0, 3.0]);
    let shuffled = map_var(&mut t, Tensor::new([2, 2, 2], vec![1.0, 0.0, 2.0, 1.0, 4.0, 3.0, 3.0, 2.0]).unwrap());
    let g2 = global_context(&mut t, &p, &proj, &shuffled).unwrap();
    assert_eq!(t.value(g), t.value(g2));
    let z = map_var(&mut t, Tensor::zeros([2, 3, 3]));
    let gz = global_context(&mut t, &p, &proj, &z).unwrap();
    assert_eq!(t.value(gz).data(), &[0.0, 0.0]);
}

#[test]
fn baseline_fuse_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::new();
    let fc = Linear::new(&mut store, &mut rng, "b", 6, 2);
    let (h, o, g) = ([0.5, -1.0], [2.0, 0.25], [-3.0, 1.5]);
    let run = |store: &ParamStore| {
        let mut t = Tape::new();
        let p = store.bind(&mut t, false);
        let (hv, ov, gv) = (t.constant(Tensor::row(&h)), t.constant(Tensor::row(&o)), t.constant(Tensor::row(&g)));
        let y = baseline_fuse(&mut t, &p, &fc, hv, ov, gv).unwrap();
        t.value(y).data().to_vec()
    };
    let want = oracle::affine(&oracle::param(&store, "b.weight"), &oracle::param(&store, "b.bias"), &[h, o, g].concat());
    for (a, b) in run(&store).iter().zip(&want) {
        assert!((a - b).abs() < 1e-14);
    }
    let mut first = vec![0.0; 12];
    first[0] = 1.0;
    first[7] = 1.0;
    *store.get_mut(fc.weight) = Tensor::new([2, 6], first).unwrap();
    *store.get_mut(fc.bias) = Tensor::zeros([2]);
    assert_eq!(run(&store), h.to_vec());
}

#[test]
fn pair_count_and_finite_outputs() {
    assert_eq!(enumerate_pairs(3, 4).len(), 3 * 4 + 3);
    assert_eq!(enumerate_pairs(2, 0).len(), 2);
    let model = Model::new(ModelConfig::default()).unwrap();
    let scene = busy_scene();
    let (t, out) = model.evaluate(&image(2, 3, 64), &scene, &ForwardOptions::default()).unwrap();
    assert_eq!(out.pairs.len(), 8);
    for v in [out.f_b, out.f_q, out.f_gq, out.f_br, out.f_c] {
        assert_eq!(t.shape(v), &[8, 64]);
        assert!(t.value(v).is_finite());
    }
    let (pi, ph) = (t.value(out.prediction.p_i), t.value(out.prediction.p_hoi));
    assert_eq!(ph.shape(), &[8, 6]);
    for (a, b) in ph.data().iter().zip(pi.data()) {
        assert!(*a > 0.0 && *a < 1.0 && a <= b);
    }
}

#[test]
fn unit_guidance_matches_unguided_bitwise() {
    let guided = Model::new(ModelConfig::default()).unwrap();
    let plain = guided.with_guidance(GuidanceMode::None).unwrap();
    let img = image(3, 3, 64);
    let scene = busy_scene();
    let unit = ForwardOptions {
        unit_guidance: true,
        ..Default::default()
    };
    let (ta, a) = guided.evaluate(&img, &scene, &unit).unwrap();
    let (tb, b) = plain.evaluate(&img, &scene, &ForwardOptions::default()).unwrap();
    assert_eq!(ta.value(a.prediction.p_hoi), tb.value(b.prediction.p_hoi));
    let (tc, c) = guided.evaluate(&img, &scene, &ForwardOptions::default()).unwrap();
    assert_ne!(ta.value(a.prediction.p_hoi), tc.value(c.prediction.p_hoi));
}

#[test]
fn prediction_head_examples() {
    let mut model = Model::new(ModelConfig {
        num_classes: 2,
        ..Default::default()
    })
    .unwrap();
    for id in [model.head.fc_p.weight, model.head.fc_p.bias, model.head.fc_pb.weight, model.head.fc_pb.bias] {
        let shape = model.params.get(id).shape().to_vec();
        *model.params.get_mut(id) = Tensor::zeros(shape);
    }
    let (t, out) = model.evaluate(&image(4, 3, 64), &two_pair_scene(), &ForwardOptions::default()).unwrap();
    assert!(t.value(out.prediction.p_i).data().iter().all(|&v| v == 0.5));
    assert!(t.value(out.prediction.b_i).data().iter().all(|&v| v == 0.5));
    assert!(t.value(out.prediction.p_hoi).data().iter().all(|&v| v == 0.25));

    *model.params.get_mut(model.head.fc_pb.bias) = Tensor::vector(&[40.0]);
    let (t, out) = model.evaluate(&image(4, 3, 64), &two_pair_scene(), &ForwardOptions::default()).unwrap();
    assert!(t.value(out.prediction.p_hoi).max_abs_diff(t.value(out.prediction.p_i)) < 1e-15);

    let mut t = Tape::new();
    let pi = t.constant(Tensor::row(&[0.8, 0.4]));
    let bi = t.constant(Tensor::new([1, 1], vec![0.5]).unwrap());
    let ph = t.mul_rows(pi, bi).unwrap();
    assert_eq!(t.value(ph).data(), &[0.4, 0.2]);
}

#[test]
fn every_operation_passes_gradient_check() {
    for r in op_suite(11).unwrap() {
        assert!(r.max_relative_error < 1e-4, "{}: {}", r.name, r.max_relative_error);
    }
}

#[test]
fn full_model_loss_passes_gradient_check() {
    for mode in [GuidanceMode::Product, GuidanceMode::Concat] {
        let model = Model::new(ModelConfig {
            guidance: mode,
            ..Default::default()
        })
        .unwrap();
        let scene = two_pair_scene();
        let results = model_check(&model, &image(5, 3, 64), &scene, &LossConfig::default(), &TrainConfig::default(), 3).unwrap();
        assert!(results.len() > 40);
        for r in results {
            assert!(r.max_relative_error < 1e-4, "{mode:?} {}: {}", r.name, r.max_relative_error);
        }
    }
}
