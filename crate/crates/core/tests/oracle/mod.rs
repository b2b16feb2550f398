//! Straight-line reference implementations on plain vectors. They read
//! parameter values out of a `ParamStore` by name and share no code with the
//! tape.

#![allow(dead_code)]

use hoi_core::data::{BBox, Detection, Interaction, SceneAnnotation};
use hoi_core::eval::{ImagePredictions, PairPrediction};
use hoi_core::params::ParamStore;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn param(store: &ParamStore, name: &str) -> Vec<f64> {
    let id = store
        .id(name)
        .unwrap_or_else(|| panic!("no parameter named {name}"));
    store.get(id).data().to_vec()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn layer_norm(x: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let mu = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    let sd = (var + eps).sqrt();
    x.iter()
        .zip(gamma.iter().zip(beta))
        .map(|(v, (g, b))| g * (v - mu) / sd + b)
        .collect()
}

/// `W x + b` with `W` stored row-major as `[out, in]`.
pub fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    b.iter()
        .enumerate()
        .map(|(o, bo)| bo + (0..n).map(|i| w[o * n + i] * x[i]).sum::<f64>())
        .collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// One TX head. `f` is `channels × cells`, `q` the head's query slice.
/// Returns the attention row and the head output.
pub fn tx_head(store: &ParamStore, name: &str, f: &[Vec<f64>], q: &[f64], temperature: f64) -> (Vec<f64>, Vec<f64>) {
    let cells = f[0].len();
    let d = q.len();
    let conv = |kind: &str| -> Vec<Vec<f64>> {
        let w = param(store, &format!("{name}.{kind}.weight"));
        let b = param(store, &format!("{name}.{kind}.bias"));
        (0..cells)
            .map(|c| {
                let column: Vec<f64> = f.iter().map(|ch| ch[c]).collect();
                affine(&w, &b, &column)
            })
            .collect()
    };
    // per-cell key and value vectors
    let keys = conv("key");
    let values = conv("value");
    let logits: Vec<f64> = keys
        .iter()
        .map(|k| k.iter().zip(q).map(|(a, b)| a * b).sum::<f64>() / ((d as f64).sqrt() * temperature))
        .collect();
    let a = softmax(&logits);
    let mut context = vec![0.0; d];
    for (c, v) in values.iter().enumerate() {
        for j in 0..d {
            context[j] += a[c] * v[j];
        }
    }
    let g1 = param(store, &format!("{name}.norm1.gamma"));
    let b1 = param(store, &format!("{name}.norm1.beta"));
    let x = layer_norm(&add(&context, q), &g1, &b1, 1e-5);
    let w = param(store, &format!("{name}.fc.weight"));
    let b = param(store, &format!("{name}.fc.bias"));
    let y = affine(&w, &b, &x);
    let g2 = param(store, &format!("{name}.norm2.gamma"));
    let b2 = param(store, &format!("{name}.norm2.beta"));
    (a, layer_norm(&add(&x, &y), &g2, &b2, 1e-5))
}

/// Multi-head, multi-layer stack: head `h` reads channel block `h` of `f`
/// and query block `h`; each layer's concatenated heads feed the next layer.
pub fn tx_stack(store: &ParamStore, heads: usize, layers: usize, f: &[Vec<f64>], q: &[f64]) -> Vec<f64> {
    let ch = f.len() / heads;
    let dh = q.len() / heads;
    let mut query = q.to_vec();
    for l in 0..layers {
        let mut next = Vec::with_capacity(q.len());
        for h in 0..heads {
            let (_, out) = tx_head(
                store,
                &format!("tx.l{l}.h{h}"),
                &f[h * ch..(h + 1) * ch],
                &query[h * dh..(h + 1) * dh],
                1.0,
            );
            next.extend(out);
        }
        query = next;
    }
    query
}

/// Binary cross-entropy written out term by term.
pub fn cross_entropy(p: &[f64], t: &[f64]) -> f64 {
    let total: f64 = p
        .iter()
        .zip(t)
        .map(|(&p, &t)| if t == 1.0 { -p.ln() } else { -(1.0 - p).ln() })
        .sum();
    total / p.len() as f64
}

/// Integer boxes on the half-open pixel grid.
pub type PixelBox = [i64; 4];

/// IoU by counting covered pixels.
pub fn pixel_iou(a: PixelBox, b: PixelBox) -> f64 {
    let inside = |bx: PixelBox, x: i64, y: i64| x >= bx[0] && x < bx[2] && y >= bx[1] && y < bx[3];
    let (mut inter, mut union) = (0u64, 0u64);
    for y in a[1].min(b[1])..a[3].max(b[3]) {
        for x in a[0].min(b[0])..a[2].max(b[2]) {
            let (ia, ib) = (inside(a, x, y), inside(b, x, y));
            if ia && ib {
                inter += 1;
            }
            if ia || ib {
                union += 1;
            }
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// One pair for a single class; `object == None` is human-only.
#[derive(Clone, Copy, Debug)]
pub struct OraclePair {
    pub human: PixelBox,
    pub object: Option<PixelBox>,
}

/// Whether a prediction may claim a label, and how well. `lenient` is the
/// rule that ignores the predicted object for human-only labels.
fn quality(p: &OraclePair, g: &OraclePair, lenient: bool) -> Option<f64> {
    let ih = pixel_iou(p.human, g.human);
    if ih < 0.5 {
        return None;
    }
    match (g.object, p.object) {
        (Some(go), Some(po)) => {
            let io = pixel_iou(po, go);
            (io >= 0.5).then_some(ih.min(io))
        }
        (Some(_), None) => None,
        (None, po) => (lenient || po.is_none()).then_some(ih),
    }
}

/// AP of one class in one image by exhaustive walk: rank by score (ties by
/// index), greedily give each prediction the best unused label, then
/// integrate precision over recall steps.
pub fn brute_force_ap(preds: &[(OraclePair, f64)], gts: &[OraclePair], lenient: bool) -> f64 {
    if gts.is_empty() {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].1.total_cmp(&preds[a].1).then(a.cmp(&b)));
    let mut used = vec![false; gts.len()];
    let mut tp = 0.0;
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        let best = gts
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .filter_map(|(j, g)| quality(&preds[i].0, g, lenient).map(|q| (j, q)))
            .fold(None, |acc: Option<(usize, f64)>, (j, q)| match acc {
                Some((_, bq)) if bq >= q => acc,
                _ => Some((j, q)),
            });
        if let Some((j, _)) = best {
            used[j] = true;
            tp += 1.0;
        }
        let recall = tp / gts.len() as f64;
        let precision = tp / (rank + 1) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    area
}

/// Direct sliding-window convolution of one `[C, H, W]` input with `[O, C,
/// k, k]` kernels.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(x: &[f64], c: usize, h: usize, w: usize, weight: &[f64], bias: &[f64], k: usize, stride: usize, pad: usize) -> (Vec<f64>, usize, usize) {
    let o = bias.len();
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; o * oh * ow];
    for oc in 0..o {
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = bias[oc];
                for ic in 0..c {
                    for di in 0..k {
                        for dj in 0..k {
                            let y = (i * stride + di) as i64 - pad as i64;
                            let xx = (j * stride + dj) as i64 - pad as i64;
                            if y < 0 || xx < 0 || y >= h as i64 || xx >= w as i64 {
                                continue;
                            }
                            acc += weight[((oc * c + ic) * k + di) * k + dj] * x[(ic * h + y as usize) * w + xx as usize];
                        }
                    }
                }
                out[(oc * oh + i) * ow + j] = acc;
            }
        }
    }
    (out, oh, ow)
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).collect()
}

/// Mean over cells of each of `c` channels.
pub fn channel_means(x: &[f64], c: usize) -> Vec<f64> {
    let cells = x.len() / c;
    x.chunks(cells).map(|ch| ch.iter().sum::<f64>() / cells as f64).collect()
}

fn detection(b: [f64; 4], category: u32) -> Detection {
    Detection {
        bbox: BBox::from_array(b).unwrap(),
        category,
        confidence: 1.0,
    }
}

pub struct MicroCase {
    pub scene: SceneAnnotation,
    pub preds: Vec<ImagePredictions>,
    pub gts: Vec<OraclePair>,
    pub oracle_preds: Vec<(OraclePair, f64)>,
}

fn random_box(rng: &mut ChaCha8Rng) -> PixelBox {
    let (x, y) = (rng.random_range(0..16), rng.random_range(0..16));
    [x, y, x + rng.random_range(2..10), y + rng.random_range(2..10)]
}

fn jitter(rng: &mut ChaCha8Rng, b: PixelBox) -> PixelBox {
    let mut j = b.map(|v| v + rng.random_range(-2..=2));
    j[0] = j[0].max(0);
    j[1] = j[1].max(0);
    j[2] = j[2].max(j[0] + 1);
    j[3] = j[3].max(j[1] + 1);
    j
}

fn as_f64(b: PixelBox) -> [f64; 4] {
    b.map(|v| v as f64)
}

/// One image, one class, at most 3 labels and 5 predictions jittered
/// around them.
pub fn micro_case(seed: u64) -> MicroCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_gt = rng.random_range(1..=3);
    let mut gts = Vec::new();
    let mut humans = Vec::new();
    let mut objects = Vec::new();
    let mut interactions = Vec::new();
    for _ in 0..n_gt {
        let h = random_box(&mut rng);
        humans.push(detection(as_f64(h), 0));
        let object = if rng.random_bool(0.6) {
            let o = random_box(&mut rng);
            objects.push(detection(as_f64(o), 1));
            interactions.push(Interaction { human: humans.len() - 1, object: Some(objects.len() - 1), class: 0 });
            Some(o)
        } else {
            interactions.push(Interaction { human: humans.len() - 1, object: None, class: 0 });
            None
        };
        gts.push(OraclePair { human: h, object });
    }
    let n_pred = rng.random_range(0..=5);
    let mut pairs = Vec::new();
    let mut oracle_preds = Vec::new();
    for _ in 0..n_pred {
        let src = gts[rng.random_range(0..gts.len())];
        let human = if rng.random_bool(0.8) { jitter(&mut rng, src.human) } else { random_box(&mut rng) };
        let object = match (src.object, rng.random_range(0..4)) {
            (_, 0) => None,
            (Some(o), 1 | 2) => Some(jitter(&mut rng, o)),
            _ => Some(random_box(&mut rng)),
        };
        // coarse scores so ties occur
        let score = f64::from(rng.random_range(0..6)) / 5.0;
        pairs.push(PairPrediction { human_box: as_f64(human), object_box: object.map(as_f64), scores: vec![score] });
        oracle_preds.push((OraclePair { human, object }, score));
    }
    MicroCase {
        scene: SceneAnnotation {
            image_id: format!("m{seed}"),
            height: 32,
            width: 32,
            humans,
            objects,
            interactions,
        },
        preds: vec![ImagePredictions { image_id: format!("m{seed}"), pairs }],
        gts,
        oracle_preds,
    }
}
