//! Finite-difference checks of every differentiable operation and of the
//! end-to-end training loss.

use hoi_tensor::{grad_check, grad_check_coords, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{aggregate, attend};
use crate::config::LossConfig;
use crate::data::SceneAnnotation;
use crate::error::Result;
use crate::guidance::guide;
use crate::head::sce_loss;
use crate::model::Model;
use crate::train::{scene_loss, TrainConfig};

pub const STEP: f64 = 1e-5;
pub const DRAWS: u64 = 20;

/// Worst relative error of one check.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_relative_error: f64,
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.5..1.5)).collect())
        .expect("shape matches data")
}

/// Scalarizes `y` as `Σ y ⊙ w` with fixed random `w`.
fn project(t: &mut Tape, y: Var, rng: &mut ChaCha8Rng) -> Result<Var> {
    let w = random(rng, t.shape(y));
    let w = t.constant(w);
    let p = t.mul(y, w)?;
    Ok(t.sum(p))
}

type Op = fn(&mut Tape, Var, &mut ChaCha8Rng) -> Result<Var>;

fn cases() -> Vec<(&'static str, Vec<usize>, Op)> {
    fn c(t: &mut Tape, rng: &mut ChaCha8Rng, shape: &[usize]) -> Var {
        let v = random(rng, shape);
        t.constant(v)
    }
    vec![
        ("matmul (left)", vec![3, 4], |t, x, r| {
            let b = c(t, r, &[4, 2]);
            let y = t.matmul(x, b)?;
            project(t, y, r)
        }),
        ("matmul (right)", vec![4, 2], |t, x, r| {
            let a = c(t, r, &[3, 4]);
            let y = t.matmul(a, x)?;
            project(t, y, r)
        }),
        ("transpose", vec![3, 5], |t, x, r| {
            let y = t.transpose(x)?;
            project(t, y, r)
        }),
        ("linear (input)", vec![2, 5], |t, x, r| {
            let (w, b) = (c(t, r, &[3, 5]), c(t, r, &[3]));
            let y = t.linear(x, w, Some(b))?;
            project(t, y, r)
        }),
        ("linear (weight)", vec![3, 5], |t, w, r| {
            let (x, b) = (c(t, r, &[2, 5]), c(t, r, &[3]));
            let y = t.linear(x, w, Some(b))?;
            project(t, y, r)
        }),
        ("linear (bias)", vec![3], |t, b, r| {
            let (x, w) = (c(t, r, &[2, 5]), c(t, r, &[3, 5]));
            let y = t.linear(x, w, Some(b))?;
            project(t, y, r)
        }),
        ("add", vec![3, 3], |t, x, r| {
            let b = c(t, r, &[3, 3]);
            let y = t.add(x, b)?;
            let y = t.add(y, x)?;
            project(t, y, r)
        }),
        ("mul", vec![2, 4], |t, x, r| {
            let b = c(t, r, &[2, 4]);
            let y = t.mul(x, b)?;
            let y = t.mul(y, x)?;
            project(t, y, r)
        }),
        ("mul_rows (matrix)", vec![3, 4], |t, x, r| {
            let s = c(t, r, &[3, 1]);
            let y = t.mul_rows(x, s)?;
            project(t, y, r)
        }),
        ("mul_rows (scale)", vec![3, 1], |t, s, r| {
            let x = c(t, r, &[3, 4]);
            let y = t.mul_rows(x, s)?;
            project(t, y, r)
        }),
        ("scale", vec![4], |t, x, r| {
            let y = t.scale(x, -2.5);
            project(t, y, r)
        }),
        ("sigmoid", vec![2, 5], |t, x, r| {
            let y = t.sigmoid(x);
            project(t, y, r)
        }),
        ("relu", vec![2, 5], |t, x, r| {
            let y = t.relu(x);
            project(t, y, r)
        }),
        ("softmax", vec![3, 6], |t, x, r| {
            let y = t.softmax(x)?;
            project(t, y, r)
        }),
        ("layer_norm (input)", vec![3, 5], |t, x, r| {
            let (g, b) = (c(t, r, &[5]), c(t, r, &[5]));
            let y = t.layer_norm(x, g, b, 1e-5)?;
            project(t, y, r)
        }),
        ("layer_norm (gamma)", vec![5], |t, g, r| {
            let (x, b) = (c(t, r, &[3, 5]), c(t, r, &[5]));
            let y = t.layer_norm(x, g, b, 1e-5)?;
            project(t, y, r)
        }),
        ("layer_norm (beta)", vec![5], |t, b, r| {
            let (x, g) = (c(t, r, &[3, 5]), c(t, r, &[5]));
            let y = t.layer_norm(x, g, b, 1e-5)?;
            project(t, y, r)
        }),
        ("concat", vec![2, 3], |t, x, r| {
            let b = c(t, r, &[2, 2]);
            let y = t.concat(&[x, b, x])?;
            project(t, y, r)
        }),
        ("slice_cols", vec![3, 6], |t, x, r| {
            let y = t.slice_cols(x, 2, 3)?;
            project(t, y, r)
        }),
        ("slice_rows", vec![5, 2, 2], |t, x, r| {
            let y = t.slice_rows(x, 1, 3)?;
            project(t, y, r)
        }),
        ("gather_rows", vec![3, 4], |t, x, r| {
            let y = t.gather_rows(x, &[Some(2), None, Some(0), Some(2)])?;
            project(t, y, r)
        }),
        ("reshape", vec![2, 6], |t, x, r| {
            let y = t.reshape(x, &[3, 2, 2])?;
            project(t, y, r)
        }),
        ("conv2d (input)", vec![2, 2, 5, 5], |t, x, r| {
            let (w, b) = (c(t, r, &[3, 2, 3, 3]), c(t, r, &[3]));
            let y = t.conv2d(x, w, Some(b), 2, 1)?;
            project(t, y, r)
        }),
        ("conv2d (kernel)", vec![3, 2, 3, 3], |t, w, r| {
            let (x, b) = (c(t, r, &[2, 5, 5]), c(t, r, &[3]));
            let y = t.conv2d(x, w, Some(b), 1, 1)?;
            project(t, y, r)
        }),
        ("conv2d (bias)", vec![3], |t, b, r| {
            let (x, w) = (c(t, r, &[2, 4, 4]), c(t, r, &[3, 2, 3, 3]));
            let y = t.conv2d(x, w, Some(b), 1, 0)?;
            project(t, y, r)
        }),
        ("roi_pool", vec![2, 6, 6], |t, f, r| {
            let y = t.roi_pool(f, &[[0.5, 1.0, 5.0, 4.5], [2.0, 0.0, 3.0, 6.0]], 2, 3)?;
            project(t, y, r)
        }),
        ("global_avg_pool", vec![2, 3, 3, 2], |t, x, r| {
            let y = t.global_avg_pool(x)?;
            project(t, y, r)
        }),
        ("sum", vec![3, 3], |t, x, _| Ok(t.sum(x))),
        ("mean", vec![4, 2], |t, x, _| {
            let y = t.mul(x, x)?;
            Ok(t.mean(y))
        }),
        ("attention (query)", vec![2, 3], |t, q, r| {
            let (k, v) = (c(t, r, &[3, 6]), c(t, r, &[3, 6]));
            let a = attend(t, q, k, 1.0)?;
            let y = aggregate(t, a, v)?;
            project(t, y, r)
        }),
        ("attention (keys)", vec![3, 6], |t, k, r| {
            let (q, v) = (c(t, r, &[2, 3]), c(t, r, &[3, 6]));
            let a = attend(t, q, k, 1.0)?;
            let y = aggregate(t, a, v)?;
            project(t, y, r)
        }),
        ("attention (values)", vec![3, 6], |t, v, r| {
            let (q, k) = (c(t, r, &[2, 3]), c(t, r, &[3, 6]));
            let a = attend(t, q, k, 1.0)?;
            let y = aggregate(t, a, v)?;
            project(t, y, r)
        }),
        ("guide", vec![2, 4], |t, x, r| {
            let (s, w) = (c(t, r, &[2, 4]), c(t, r, &[2, 4]));
            let y = guide(t, x, s, w)?;
            let y = guide(t, s, y, x)?;
            project(t, y, r)
        }),
        ("sce_loss", vec![3, 4], |t, x, r| {
            let target: Vec<f64> = (0..12).map(|_| f64::from(r.random_bool(0.4))).collect();
            let p = t.sigmoid(x);
            sce_loss(t, p, &Tensor::new([3, 4], target)?, &LossConfig::default())
        }),
    ]
}

/// Each operation on [`DRAWS`] random inputs; the worst error per operation.
pub fn op_suite(seed: u64) -> Result<Vec<CheckResult>> {
    cases()
        .into_iter()
        .map(|(name, shape, op)| {
            let mut worst: f64 = 0.0;
            for draw in 0..DRAWS {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ draw.wrapping_mul(0x9e37_79b9));
                let x = random(&mut rng, &shape);
                let fixed = rng.random::<u64>();
                let err = grad_check(
                    |t: &mut Tape, v| op(t, v, &mut ChaCha8Rng::seed_from_u64(fixed)),
                    &x,
                    STEP,
                )?;
                worst = worst.max(err);
            }
            Ok(CheckResult {
                name: name.to_string(),
                max_relative_error: worst,
            })
        })
        .collect()
}

/// End-to-end training loss of `scene` against every trainable parameter
/// tensor, probing up to `coords` evenly spaced entries of each.
pub fn model_check(
    model: &Model,
    image: &Tensor,
    scene: &SceneAnnotation,
    loss: &LossConfig,
    train: &TrainConfig,
    coords: usize,
) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for id in model.params.ids() {
        if !model.params.is_trainable(id) {
            continue;
        }
        let x = model.params.get(id);
        let n = x.numel();
        let picks: Vec<usize> = (0..coords.min(n)).map(|i| i * n / coords.min(n)).collect();
        let err = grad_check_coords(
            |t: &mut Tape, v| {
                let p = model.params.bind(t, false).with_var(id, v);
                scene_loss(t, &p, model, image, scene, loss, train)
            },
            x,
            STEP,
            &picks,
        )?;
        out.push(CheckResult {
            name: model.params.name(id).to_string(),
            max_relative_error: err,
        });
    }
    Ok(out)
}
