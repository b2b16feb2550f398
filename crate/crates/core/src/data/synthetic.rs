//! Synthetic interaction scenes.
//!
//! Every label is a rule-table lookup on geometry: a (human, object) pair is
//! labeled from the object's category and the pair's relative-layout bucket,
//! and a human alone is labeled from its pose bucket. Boxes have integer
//! coordinates and every layout decision keeps a margin of at least one
//! pixel, so uniform rescaling and translation never change a bucket.

use std::collections::{BTreeMap, BTreeSet};

use hoi_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::annotation::{BBox, Detection, Interaction, SceneAnnotation, HUMAN_CATEGORY};
use crate::error::{HoiError, Result};

const SCENE_ATTEMPTS: usize = 500;
const PLACEMENT_ATTEMPTS: usize = 400;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bucket {
    /// Boxes overlap and the object's center is above the human's.
    OverlappingUpper,
    /// Boxes overlap and the object's center is at or below the human's.
    OverlappingLower,
    /// Disjoint, gap below `0.75 · min(human width, human height)`.
    Adjacent,
    Distant,
    /// Human-only: box wider than tall.
    Lying,
    Upright,
}

impl Bucket {
    pub fn is_pose(self) -> bool {
        matches!(self, Bucket::Lying | Bucket::Upright)
    }
}

/// Distance in pixels every generated layout keeps from a bucket boundary.
pub const LAYOUT_MARGIN: f64 = 1.0;

/// Relative-layout bucket of a pair. Returns `None` when the geometry sits
/// closer than `margin` pixels to a bucket boundary.
pub fn pair_bucket(human: &BBox, object: &BBox, margin: f64) -> Option<Bucket> {
    if human.intersection_area(object) > 0.0 {
        let dy = object.center().1 - human.center().1;
        if dy.abs() < margin {
            return None;
        }
        return Some(if dy < 0.0 {
            Bucket::OverlappingUpper
        } else {
            Bucket::OverlappingLower
        });
    }
    let gx = (object.x1 - human.x2).max(human.x1 - object.x2).max(0.0);
    let gy = (object.y1 - human.y2).max(human.y1 - object.y2).max(0.0);
    let gap = gx.max(gy);
    let threshold = 0.75 * human.width().min(human.height());
    if (gap - threshold).abs() < margin {
        None
    } else if gap < threshold {
        Some(Bucket::Adjacent)
    } else {
        Some(Bucket::Distant)
    }
}

/// Pose bucket of a human box; `None` when width and height differ by less
/// than `2 · margin`.
pub fn pose_bucket(human: &BBox, margin: f64) -> Option<Bucket> {
    let d = human.width() - human.height();
    if d.abs() < 2.0 * margin {
        None
    } else if d > 0.0 {
        Some(Bucket::Lying)
    } else {
        Some(Bucket::Upright)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationRule {
    /// Object category, or `None` for a human-only rule on a pose bucket.
    pub category: Option<u32>,
    pub bucket: Bucket,
    pub class: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub num_object_categories: u32,
    pub scene_count: usize,
    pub rng_seed: u64,
    pub relation_rules: Vec<RelationRule>,
    pub image_size: usize,
    pub max_humans: usize,
    /// Objects placed at random in addition to the anchor interaction.
    pub max_extra_objects: usize,
    /// Probability that a generated label is replaced by a different class.
    pub label_noise: f64,
    /// Classes whose total label count is capped at `rare_cap`.
    pub rare_classes: Vec<usize>,
    pub rare_cap: usize,
    pub class_names: Vec<String>,
    pub category_names: Vec<String>,
}

impl Default for SyntheticSpec {
    /// Six classes over four object categories; the fourth category
    /// (bicycle) has no rule and only appears as a distractor.
    fn default() -> Self {
        let rule = |category: Option<u32>, bucket, class| RelationRule {
            category,
            bucket,
            class,
        };
        SyntheticSpec {
            num_classes: 6,
            num_object_categories: 4,
            scene_count: 200,
            rng_seed: 17,
            relation_rules: vec![
                rule(Some(1), Bucket::OverlappingUpper, 0),
                rule(Some(2), Bucket::OverlappingUpper, 1),
                rule(Some(2), Bucket::OverlappingLower, 2),
                rule(Some(3), Bucket::OverlappingLower, 3),
                rule(Some(3), Bucket::Adjacent, 4),
                rule(None, Bucket::Lying, 5),
            ],
            image_size: 64,
            max_humans: 2,
            max_extra_objects: 2,
            label_noise: 0.0,
            rare_classes: Vec::new(),
            rare_cap: 9,
            class_names: ["talk_on_phone", "drink", "hold_cup", "kick", "throw", "lie"]
                .map(String::from)
                .to_vec(),
            category_names: ["phone", "cup", "ball", "bicycle"].map(String::from).to_vec(),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(HoiError::Spec(m));
        if self.num_classes == 0 {
            return err("num_classes must be at least 1".into());
        }
        if self.image_size < 32 {
            return err(format!("image_size {} below 32", self.image_size));
        }
        if self.max_humans == 0 {
            return err("max_humans must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return err(format!("label_noise {} outside [0, 1]", self.label_noise));
        }
        let mut keys = BTreeMap::new();
        for (i, r) in self.relation_rules.iter().enumerate() {
            if r.class >= self.num_classes {
                return err(format!("rule {i}: class {} out of range", r.class));
            }
            match r.category {
                None if !r.bucket.is_pose() => {
                    return err(format!("rule {i}: human-only rule needs a pose bucket"))
                }
                Some(_) if r.bucket.is_pose() => {
                    return err(format!("rule {i}: object rule needs a layout bucket"))
                }
                Some(c) if c == HUMAN_CATEGORY || c > self.num_object_categories => {
                    return err(format!("rule {i}: category {c} out of range"))
                }
                _ => {}
            }
            if let Some(prev) = keys.insert((r.category, r.bucket), r.class) {
                if prev != r.class {
                    return err(format!("rule {i}: conflicting classes for one layout"));
                }
            }
        }
        let reachable: BTreeSet<usize> = self.relation_rules.iter().map(|r| r.class).collect();
        if let Some(c) = (0..self.num_classes).find(|c| !reachable.contains(c)) {
            return err(format!("interaction class {c} is unreachable"));
        }
        if let Some(&c) = self.rare_classes.iter().find(|&&c| c >= self.num_classes) {
            return err(format!("rare class {c} out of range"));
        }
        if !self.class_names.is_empty() && self.class_names.len() != self.num_classes {
            return err("class_names length differs from num_classes".into());
        }
        if !self.category_names.is_empty()
            && self.category_names.len() != self.num_object_categories as usize
        {
            return err("category_names length differs from num_object_categories".into());
        }
        Ok(())
    }

    pub fn lookup(&self, category: Option<u32>, bucket: Bucket) -> Option<usize> {
        self.relation_rules
            .iter()
            .find(|r| r.category == category && r.bucket == bucket)
            .map(|r| r.class)
    }

    /// Labels every pair and human of a scene by rule lookup on its geometry.
    /// `None` when any pair or pose is within `margin` of a bucket boundary.
    pub fn label(&self, humans: &[Detection], objects: &[Detection], margin: f64) -> Option<Vec<Interaction>> {
        let mut out = Vec::new();
        for (hi, h) in humans.iter().enumerate() {
            let pose = pose_bucket(&h.bbox, margin)?;
            if let Some(class) = self.lookup(None, pose) {
                out.push(Interaction {
                    human: hi,
                    object: None,
                    class,
                });
            }
            for (oi, o) in objects.iter().enumerate() {
                let bucket = pair_bucket(&h.bbox, &o.bbox, margin)?;
                if let Some(class) = self.lookup(Some(o.category), bucket) {
                    out.push(Interaction {
                        human: hi,
                        object: Some(oi),
                        class,
                    });
                }
            }
        }
        Some(out)
    }
}

/// One generated scene with its rendered `3 × S × S` image.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub scene: SceneAnnotation,
    pub image: Tensor,
}

pub fn generate_synthetic_dataset(spec: &SyntheticSpec) -> Result<Vec<Sample>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let mut counts = vec![0usize; spec.num_classes];
    let mut out = Vec::with_capacity(spec.scene_count);
    for index in 0..spec.scene_count {
        let scene = generate_scene(spec, &mut rng, index, &counts)?;
        for it in &scene.interactions {
            counts[it.class] += 1;
        }
        let image = render(&scene, spec.image_size, &mut rng);
        out.push(Sample { scene, image });
    }
    Ok(out)
}

fn capped(spec: &SyntheticSpec, counts: &[usize], class: usize) -> bool {
    spec.rare_classes.contains(&class) && counts[class] >= spec.rare_cap
}

fn generate_scene(
    spec: &SyntheticSpec,
    rng: &mut ChaCha8Rng,
    index: usize,
    counts: &[usize],
) -> Result<SceneAnnotation> {
    let eligible: Vec<&RelationRule> = spec
        .relation_rules
        .iter()
        .filter(|r| !capped(spec, counts, r.class))
        .collect();
    for _ in 0..SCENE_ATTEMPTS {
        let anchor = if eligible.is_empty() {
            None
        } else {
            Some(*eligible[rng.random_range(0..eligible.len())])
        };
        let Some((humans, objects)) = place_scene(spec, rng, anchor) else {
            continue;
        };
        let Some(mut interactions) = spec.label(&humans, &objects, LAYOUT_MARGIN) else {
            continue;
        };
        if spec.label_noise > 0.0 && spec.num_classes > 1 {
            for it in &mut interactions {
                if rng.random_bool(spec.label_noise) {
                    let shift = rng.random_range(1..spec.num_classes);
                    it.class = (it.class + shift) % spec.num_classes;
                }
            }
            interactions.sort();
            interactions.dedup();
        }
        let mut added = vec![0usize; spec.num_classes];
        for it in &interactions {
            added[it.class] += 1;
        }
        let over = spec
            .rare_classes
            .iter()
            .any(|&c| added[c] > 0 && counts[c] + added[c] > spec.rare_cap);
        if over {
            continue;
        }
        return Ok(SceneAnnotation {
            image_id: format!("scene-{index:05}"),
            height: spec.image_size,
            width: spec.image_size,
            humans,
            objects,
            interactions,
        });
    }
    Err(HoiError::Spec(format!(
        "could not place scene {index} within {SCENE_ATTEMPTS} attempts"
    )))
}

fn int_box(x: i64, y: i64, w: i64, h: i64) -> BBox {
    BBox {
        x1: x as f64,
        y1: y as f64,
        x2: (x + w) as f64,
        y2: (y + h) as f64,
    }
}

fn random_human(rng: &mut ChaCha8Rng, size: i64, lying: bool) -> BBox {
    let (w, h) = if lying {
        (rng.random_range(24..=34), rng.random_range(10..=15))
    } else {
        (rng.random_range(10..=16), rng.random_range(22..=32))
    };
    int_box(
        rng.random_range(0..=size - w),
        rng.random_range(0..=size - h),
        w,
        h,
    )
}

fn object_size(rng: &mut ChaCha8Rng) -> (i64, i64) {
    (rng.random_range(7..=12), rng.random_range(7..=12))
}

fn random_box_near(rng: &mut ChaCha8Rng, size: i64, near: &BBox, w: i64, h: i64) -> BBox {
    let lo_x = (near.x1 as i64 - w - 16).max(0);
    let hi_x = (near.x2 as i64 + 16).min(size - w);
    let lo_y = (near.y1 as i64 - h - 16).max(0);
    let hi_y = (near.y2 as i64 + 16).min(size - h);
    int_box(
        rng.random_range(lo_x..=hi_x.max(lo_x)),
        rng.random_range(lo_y..=hi_y.max(lo_y)),
        w,
        h,
    )
}

fn random_box(rng: &mut ChaCha8Rng, size: i64, w: i64, h: i64) -> BBox {
    int_box(
        rng.random_range(0..=size - w),
        rng.random_range(0..=size - h),
        w,
        h,
    )
}

fn disjoint(b: &BBox, others: &[Detection]) -> bool {
    others.iter().all(|o| o.bbox.intersection_area(b) == 0.0)
}

fn detection(rng: &mut ChaCha8Rng, bbox: BBox, category: u32) -> Detection {
    Detection {
        bbox,
        category,
        confidence: rng.random_range(0.7..1.0),
    }
}

/// Places humans and objects so that `anchor` is realized between the first
/// human and (for object rules) the first object.
fn place_scene(
    spec: &SyntheticSpec,
    rng: &mut ChaCha8Rng,
    anchor: Option<RelationRule>,
) -> Option<(Vec<Detection>, Vec<Detection>)> {
    let size = spec.image_size as i64;
    let lying = match anchor {
        Some(RelationRule {
            category: None,
            bucket,
            ..
        }) => bucket == Bucket::Lying,
        _ => rng.random_bool(0.2),
    };
    let first = random_human(rng, size, lying);
    let mut humans = vec![detection(rng, first, HUMAN_CATEGORY)];
    let mut objects = Vec::new();

    if let Some(RelationRule {
        category: Some(cat),
        bucket,
        ..
    }) = anchor
    {
        let (w, h) = object_size(rng);
        let placed = (0..PLACEMENT_ATTEMPTS)
            .map(|_| random_box_near(rng, size, &first, w, h))
            .find(|b| pair_bucket(&first, b, LAYOUT_MARGIN) == Some(bucket))?;
        objects.push(detection(rng, placed, cat));
    }

    let extra_humans = rng.random_range(0..spec.max_humans);
    for _ in 0..extra_humans {
        let lying = rng.random_bool(0.3);
        let b = (0..PLACEMENT_ATTEMPTS)
            .map(|_| random_human(rng, size, lying))
            .find(|b| disjoint(b, &humans))?;
        humans.push(detection(rng, b, HUMAN_CATEGORY));
    }

    let extra_objects = rng.random_range(0..=spec.max_extra_objects);
    for _ in 0..extra_objects {
        let cat = rng.random_range(1..=spec.num_object_categories.max(1));
        let (w, h) = object_size(rng);
        let anchor_human = &humans[rng.random_range(0..humans.len())].bbox;
        let near = rng.random_bool(0.5);
        let b = (0..PLACEMENT_ATTEMPTS)
            .map(|_| {
                if near {
                    random_box_near(rng, size, anchor_human, w, h)
                } else {
                    random_box(rng, size, w, h)
                }
            })
            .find(|b| disjoint(b, &objects))?;
        objects.push(detection(rng, b, cat));
    }
    Some((humans, objects))
}

/// Per-category color and pattern; category 0 is the human texture.
pub fn texture(category: u32, x: usize, y: usize) -> [f64; 3] {
    if category == HUMAN_CATEGORY {
        let shade = if (x / 2).is_multiple_of(2) { 1.0 } else { 0.75 };
        return [0.85 * shade, 0.65 * shade, 0.45 * shade];
    }
    let hue = (category as f64 * 0.618_033_988_75).fract();
    let base = hsv(hue, 0.8, 0.95);
    let on = match category % 4 {
        0 => ((x / 2) + (y / 2)).is_multiple_of(2),
        1 => (y / 2).is_multiple_of(2),
        2 => x.is_multiple_of(3) || y.is_multiple_of(3),
        _ => (x + y) % 4 < 2,
    };
    let k = if on { 1.0 } else { 0.35 };
    [base[0] * k, base[1] * k, base[2] * k]
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    match i as i64 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Paints a low-amplitude noise background, then humans, then objects.
/// Pixel `(x, y)` belongs to a box when its center lies inside it. Values
/// are rounded to `f32` so the stored blob reloads bit-identically.
pub fn render(scene: &SceneAnnotation, size: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let plane = size * size;
    let mut data: Vec<f64> = (0..3 * plane)
        .map(|_| rng.random_range(0.0..0.1))
        .collect();
    for det in scene.humans.iter().chain(&scene.objects) {
        let b = &det.bbox;
        for y in 0..size {
            let cy = y as f64 + 0.5;
            if cy < b.y1 || cy >= b.y2 {
                continue;
            }
            for x in 0..size {
                let cx = x as f64 + 0.5;
                if cx < b.x1 || cx >= b.x2 {
                    continue;
                }
                let local_x = x - b.x1.max(0.0) as usize;
                let local_y = y - b.y1.max(0.0) as usize;
                let rgb = texture(det.category, local_x, local_y);
                for (c, v) in rgb.iter().enumerate() {
                    data[c * plane + y * size + x] = *v;
                }
            }
        }
    }
    for v in &mut data {
        *v = *v as f32 as f64;
    }
    Tensor::new([3, size, size], data).expect("3 x size x size")
}
