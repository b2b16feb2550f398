//! Training-time augmentation: two distinct transforms per call, applied to
//! pixels and boxes together.

use hoi_tensor::Tensor;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::annotation::{BBox, Detection, Interaction, SceneAnnotation};

const RETRY_BUDGET: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transform {
    HorizontalFlip,
    /// Zoomed crop, aspect preserved, window containing every box.
    Crop,
    GaussianNoise,
    /// Uniform scale plus translation keeping every box inside the image.
    Affine,
}

pub const ALL_TRANSFORMS: [Transform; 4] = [
    Transform::HorizontalFlip,
    Transform::Crop,
    Transform::GaussianNoise,
    Transform::Affine,
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub noise_sigma: f64,
    pub max_zoom: f64,
    pub min_scale: f64,
    pub max_scale: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            noise_sigma: 0.03,
            max_zoom: 1.5,
            min_scale: 0.8,
            max_scale: 1.2,
        }
    }
}

/// Applies two distinct transforms drawn uniformly from [`ALL_TRANSFORMS`].
pub fn augment<R: Rng + ?Sized>(
    image: &Tensor,
    scene: &SceneAnnotation,
    rng: &mut R,
    cfg: &AugmentConfig,
) -> (Tensor, SceneAnnotation) {
    let picks = sample(rng, ALL_TRANSFORMS.len(), 2);
    let mut img = image.clone();
    let mut sc = scene.clone();
    for i in picks.iter() {
        (img, sc) = apply(ALL_TRANSFORMS[i], &img, &sc, rng, cfg);
    }
    (img, sc)
}

/// Applies one transform. Geometric transforms whose sampled parameters
/// would lose every human are resampled, then skipped.
pub fn apply<R: Rng + ?Sized>(
    t: Transform,
    image: &Tensor,
    scene: &SceneAnnotation,
    rng: &mut R,
    cfg: &AugmentConfig,
) -> (Tensor, SceneAnnotation) {
    match t {
        Transform::HorizontalFlip => hflip(image, scene),
        Transform::GaussianNoise => (add_noise(image, cfg.noise_sigma, rng), scene.clone()),
        Transform::Crop | Transform::Affine => {
            for _ in 0..RETRY_BUDGET {
                let Some((a, tx, ty)) = sample_similarity(t, scene, rng, cfg) else {
                    continue;
                };
                let (img, sc) = similarity(image, scene, a, tx, ty);
                if let Some(sc) = cleanup(sc) {
                    return (img, sc);
                }
            }
            (image.clone(), scene.clone())
        }
    }
}

/// `x' = W − x` on both box edges; pixel column `x` moves to `W − 1 − x`.
pub fn hflip(image: &Tensor, scene: &SceneAnnotation) -> (Tensor, SceneAnnotation) {
    let [c, h, w] = *image.shape() else {
        panic!("image must be C x H x W");
    };
    let src = image.data();
    let mut out = vec![0.0; src.len()];
    for ch in 0..c {
        for y in 0..h {
            let row = (ch * h + y) * w;
            for x in 0..w {
                out[row + x] = src[row + w - 1 - x];
            }
        }
    }
    let width = scene.width as f64;
    let flip = |d: &Detection| Detection {
        bbox: BBox {
            x1: width - d.bbox.x2,
            y1: d.bbox.y1,
            x2: width - d.bbox.x1,
            y2: d.bbox.y2,
        },
        ..*d
    };
    let mut sc = scene.clone();
    sc.humans = scene.humans.iter().map(flip).collect();
    sc.objects = scene.objects.iter().map(flip).collect();
    (Tensor::new(image.shape().to_vec(), out).expect("same shape"), sc)
}

pub fn add_noise<R: Rng + ?Sized>(image: &Tensor, sigma: f64, rng: &mut R) -> Tensor {
    if sigma <= 0.0 {
        return image.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    let data = image
        .data()
        .iter()
        .map(|v| v + normal.sample(rng))
        .collect();
    Tensor::new(image.shape().to_vec(), data).expect("same shape")
}

fn union_of_boxes(scene: &SceneAnnotation) -> Option<BBox> {
    scene
        .humans
        .iter()
        .chain(&scene.objects)
        .map(|d| d.bbox)
        .reduce(|a, b| a.union(&b))
}

/// Samples `(scale, tx, ty)` for `p' = scale · p + t`.
fn sample_similarity<R: Rng + ?Sized>(
    t: Transform,
    scene: &SceneAnnotation,
    rng: &mut R,
    cfg: &AugmentConfig,
) -> Option<(f64, f64, f64)> {
    let u = union_of_boxes(scene)?;
    let (w, h) = (scene.width as f64, scene.height as f64);
    match t {
        Transform::Crop => {
            // window of size (w/z, h/z) must contain the union
            let zmax = cfg.max_zoom.min(w / u.width()).min(h / u.height());
            if zmax <= 1.0 {
                return None;
            }
            let z = rng.random_range(1.0..=zmax);
            let (ww, wh) = (w / z, h / z);
            let x0 = sample_interval(rng, (u.x2 - ww).max(0.0), u.x1.min(w - ww))?;
            let y0 = sample_interval(rng, (u.y2 - wh).max(0.0), u.y1.min(h - wh))?;
            Some((z, -x0 * z, -y0 * z))
        }
        Transform::Affine => {
            let a = rng.random_range(cfg.min_scale..=cfg.max_scale);
            let tx = sample_interval(rng, -a * u.x1, w - a * u.x2)?;
            let ty = sample_interval(rng, -a * u.y1, h - a * u.y2)?;
            Some((a, tx, ty))
        }
        _ => None,
    }
}

fn sample_interval<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> Option<f64> {
    if hi < lo {
        None
    } else if hi == lo {
        Some(lo)
    } else {
        Some(rng.random_range(lo..=hi))
    }
}

/// Nearest-neighbour resampling under `p' = a · p + t`; pixels mapping from
/// outside the source are zero.
pub fn similarity(
    image: &Tensor,
    scene: &SceneAnnotation,
    a: f64,
    tx: f64,
    ty: f64,
) -> (Tensor, SceneAnnotation) {
    let [c, h, w] = *image.shape() else {
        panic!("image must be C x H x W");
    };
    let src = image.data();
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        let sy = ((y as f64 + 0.5 - ty) / a).floor();
        if sy < 0.0 || sy >= h as f64 {
            continue;
        }
        for x in 0..w {
            let sx = ((x as f64 + 0.5 - tx) / a).floor();
            if sx < 0.0 || sx >= w as f64 {
                continue;
            }
            for ch in 0..c {
                out[(ch * h + y) * w + x] = src[(ch * h + sy as usize) * w + sx as usize];
            }
        }
    }
    let map = |d: &Detection| Detection {
        bbox: BBox {
            x1: a * d.bbox.x1 + tx,
            y1: a * d.bbox.y1 + ty,
            x2: a * d.bbox.x2 + tx,
            y2: a * d.bbox.y2 + ty,
        },
        ..*d
    };
    let mut sc = scene.clone();
    sc.humans = scene.humans.iter().map(map).collect();
    sc.objects = scene.objects.iter().map(map).collect();
    (Tensor::new(image.shape().to_vec(), out).expect("same shape"), sc)
}

/// Clips boxes to the image, drops detections whose area falls below one
/// square pixel together with their interactions, and reindexes the rest.
/// `None` when no human survives.
pub fn cleanup(mut scene: SceneAnnotation) -> Option<SceneAnnotation> {
    let (w, h) = (scene.width as f64, scene.height as f64);
    let keep = |dets: &mut Vec<Detection>| -> Vec<Option<usize>> {
        let mut map = Vec::with_capacity(dets.len());
        let mut kept = Vec::with_capacity(dets.len());
        for d in dets.iter() {
            let b = d.bbox.clip(w, h);
            if b.x2 > b.x1 && b.y2 > b.y1 && b.area() >= 1.0 {
                map.push(Some(kept.len()));
                kept.push(Detection { bbox: b, ..*d });
            } else {
                map.push(None);
            }
        }
        *dets = kept;
        map
    };
    let hmap = keep(&mut scene.humans);
    let omap = keep(&mut scene.objects);
    if scene.humans.is_empty() {
        return None;
    }
    scene.interactions = scene
        .interactions
        .iter()
        .filter_map(|it| {
            let human = hmap[it.human]?;
            let object = match it.object {
                None => None,
                Some(o) => Some(omap[o]?),
            };
            Some(Interaction {
                human,
                object,
                class: it.class,
            })
        })
        .collect();
    Some(scene)
}
