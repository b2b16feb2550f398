//! Pair labeling, per-scene gradients and SGD.

use hoi_tensor::{Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::LossConfig;
use crate::data::augment::{augment, AugmentConfig};
use crate::data::{Sample, SceneAnnotation};
use crate::error::{HoiError, Result};
use crate::eval::iou;
use crate::head::sce_loss;
use crate::model::{ForwardOptions, Model, PairIndex};
use crate::params::{Bound, ParamStore};

/// How a scene's `[P, K]` loss entries combine into its training objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reduction {
    Mean,
    Sum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    Constant,
    /// Half-cosine from the initial rate down to zero over the run.
    Cosine,
}

impl Schedule {
    pub fn rate(self, lr: f64, epoch: usize, epochs: usize) -> f64 {
        match self {
            Schedule::Constant => lr,
            Schedule::Cosine => {
                let f = epoch as f64 / epochs.max(1) as f64;
                0.5 * lr * (1.0 + (std::f64::consts::PI * f).cos())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Scenes per SGD step; the step uses the mean of their gradients.
    pub batch: usize,
    pub seed: u64,
    pub augment: bool,
    pub augmentation: AugmentConfig,
    /// Both boxes must reach this IoU with a labeled pair for a positive.
    pub positive_iou: f64,
    pub reduction: Reduction,
    pub schedule: Schedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            momentum: 0.9,
            weight_decay: 0.0001,
            epochs: 100,
            batch: 1,
            seed: 0,
            augment: true,
            augmentation: AugmentConfig::default(),
            positive_iou: 0.5,
            reduction: Reduction::Sum,
            schedule: Schedule::Cosine,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // negated so that NaN is rejected
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(HoiError::Config(format!(
                "need lr > 0, momentum in [0, 1), weight_decay >= 0; got {}, {}, {}",
                self.lr, self.momentum, self.weight_decay
            )));
        }
        if self.batch == 0 {
            return Err(HoiError::Config("batch must be at least 1".into()));
        }
        if !(self.positive_iou > 0.0 && self.positive_iou <= 1.0) {
            return Err(HoiError::Config(format!("positive_iou {} outside (0, 1]", self.positive_iou)));
        }
        Ok(())
    }
}

/// `[P, K]` binary targets: pair `i` is positive for class `k` when both its
/// boxes reach `threshold` IoU with a labeled class-`k` pair. Human-only
/// labels match only human-only candidates.
pub fn pair_targets(scene: &SceneAnnotation, pairs: &[PairIndex], classes: usize, threshold: f64) -> Result<Tensor> {
    let mut out = vec![0.0; pairs.len() * classes];
    for it in &scene.interactions {
        if it.class >= classes {
            return Err(HoiError::format(
                &scene.image_id,
                format!("interaction class {} outside 0..{classes}", it.class),
            ));
        }
        let gh = &scene.humans[it.human].bbox;
        for (i, q) in pairs.iter().enumerate() {
            if iou(&scene.humans[q.human].bbox, gh) < threshold {
                continue;
            }
            let hit = match (q.object, it.object) {
                (None, None) => true,
                (Some(a), Some(b)) => iou(&scene.objects[a].bbox, &scene.objects[b].bbox) >= threshold,
                _ => false,
            };
            if hit {
                out[i * classes + it.class] = 1.0;
            }
        }
    }
    Ok(Tensor::new([pairs.len(), classes], out)?)
}

/// Training objective of one scene on `t`, with parameters `p`.
pub fn scene_loss(
    t: &mut Tape,
    p: &Bound,
    model: &Model,
    image: &Tensor,
    scene: &SceneAnnotation,
    loss: &LossConfig,
    cfg: &TrainConfig,
) -> Result<Var> {
    let out = model.forward(t, p, image, scene, &ForwardOptions::default())?;
    let targets = pair_targets(scene, &out.pairs, model.config.num_classes, cfg.positive_iou)?;
    let mut total = sce_loss(t, out.prediction.p_hoi, &targets, loss)?;
    if cfg.reduction == Reduction::Sum {
        total = t.scale(total, targets.numel() as f64);
    }
    if loss.proposal_loss {
        let (rows, k) = (targets.shape()[0], targets.shape()[1]);
        let any: Vec<f64> = targets
            .data()
            .chunks(k)
            .map(|row| if row.contains(&1.0) { 1.0 } else { 0.0 })
            .collect();
        let mut aux = sce_loss(t, out.prediction.b_i, &Tensor::new([rows, 1], any)?, loss)?;
        if cfg.reduction == Reduction::Sum {
            aux = t.scale(aux, rows as f64);
        }
        total = t.add(total, aux)?;
    }
    Ok(total)
}

/// Loss of one scene and the gradient of every parameter (`None` for
/// frozen or unused ones).
pub fn scene_gradient(
    model: &Model,
    image: &Tensor,
    scene: &SceneAnnotation,
    loss: &LossConfig,
    cfg: &TrainConfig,
) -> Result<(f64, Vec<Option<Tensor>>)> {
    let mut t = Tape::new();
    let p = model.params.bind(&mut t, true);
    let total = scene_loss(&mut t, &p, model, image, scene, loss, cfg)?;
    let value = t.value(total).data()[0];
    let mut grads = t.backward(total)?;
    let g = p.vars().iter().map(|&v| grads.take(v)).collect();
    Ok((value, g))
}

/// SGD with momentum and coupled weight decay:
/// `v ← μ·v + g + λ·w`, `w ← w − lr·v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Option<Vec<f64>>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64, params: &ParamStore) -> Self {
        Sgd {
            lr,
            momentum,
            weight_decay,
            velocity: vec![None; params.len()],
        }
    }

    /// Updates every trainable parameter that has a gradient.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Option<Tensor>]) {
        let ids: Vec<_> = params.ids().collect();
        for (id, g) in ids.into_iter().zip(grads) {
            let Some(g) = g else { continue };
            if !params.is_trainable(id) {
                continue;
            }
            let i = id.index();
            let w = params.get_mut(id).data_mut();
            let v = self.velocity[i].get_or_insert_with(|| vec![0.0; w.len()]);
            for ((wj, vj), gj) in w.iter_mut().zip(v.iter_mut()).zip(g.data()) {
                *vj = self.momentum * *vj + gj + self.weight_decay * *wj;
                *wj -= self.lr * *vj;
            }
        }
    }
}

/// Per-epoch summary handed to the training callback.
#[derive(Clone, Debug)]
pub struct EpochReport {
    pub epoch: usize,
    pub mean_loss: f64,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 over the three words
    let mut z = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Runs `cfg.epochs` epochs. Per-scene gradients inside a batch run on the
/// current rayon pool and are summed in scene order, so results do not
/// depend on the thread count. `on_epoch` may stop training by returning
/// `Ok(false)`.
pub fn train(
    model: &mut Model,
    data: &[Sample],
    cfg: &TrainConfig,
    loss: &LossConfig,
    mut on_epoch: impl FnMut(&Model, &EpochReport) -> Result<bool>,
) -> Result<()> {
    cfg.validate()?;
    loss.validate()?;
    if data.is_empty() {
        return Err(HoiError::Config("no training scenes".into()));
    }
    let mut opt = Sgd::new(cfg.lr, cfg.momentum, cfg.weight_decay, &model.params);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch as u64, u64::MAX));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        opt.lr = cfg.schedule.rate(cfg.lr, epoch, cfg.epochs);
        for batch in order.chunks(cfg.batch) {
            let results: Vec<Result<(f64, Vec<Option<Tensor>>)>> = batch
                .par_iter()
                .map(|&i| {
                    let s = &data[i];
                    if cfg.augment {
                        let mut r = ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch as u64, i as u64));
                        let (img, sc) = augment(&s.image, &s.scene, &mut r, &cfg.augmentation);
                        scene_gradient(model, &img, &sc, loss, cfg)
                    } else {
                        scene_gradient(model, &s.image, &s.scene, loss, cfg)
                    }
                })
                .collect();
            let mut sum: Vec<Option<Tensor>> = vec![None; model.params.len()];
            for r in results {
                let (l, grads) = r?;
                loss_sum += l;
                for (acc, g) in sum.iter_mut().zip(grads) {
                    let Some(g) = g else { continue };
                    match acc {
                        Some(a) => a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += y),
                        None => *acc = Some(g),
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            if batch.len() > 1 {
                for g in sum.iter_mut().flatten() {
                    g.data_mut().iter_mut().for_each(|x| *x *= scale);
                }
            }
            opt.step(&mut model.params, &sum);
        }
        let report = EpochReport {
            epoch,
            mean_loss: loss_sum / data.len() as f64,
        };
        if !on_epoch(model, &report)? {
            break;
        }
    }
    Ok(())
}
