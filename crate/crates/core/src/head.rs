//! Prediction heads, the symmetric cross-entropy loss and score shaping.

use hoi_tensor::ops::sigmoid_scalar;
use hoi_tensor::{Tape, Tensor, Var};
use rand::Rng;

use crate::config::{LisConfig, LossConfig};
use crate::error::{HoiError, Result};
use crate::layers::Linear;
use crate::params::{Bound, ParamStore};

#[derive(Clone, Debug)]
pub struct PredictionHead {
    /// `3D → K`.
    pub fc_p: Linear,
    /// `2D → 1`.
    pub fc_pb: Linear,
}

/// Rows per pair.
#[derive(Clone, Copy, Debug)]
pub struct Prediction {
    /// `[P, K]` class scores.
    pub p_i: Var,
    /// `[P, 1]` interaction proposal score.
    pub b_i: Var,
    /// `[P, K]`, `p_i` scaled by `b_i`.
    pub p_hoi: Var,
}

impl PredictionHead {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, dim: usize, classes: usize) -> Self {
        PredictionHead {
            fc_p: Linear::new(store, rng, "head.fc_p", 3 * dim, classes),
            fc_pb: Linear::new(store, rng, "head.fc_pb", 2 * dim, 1),
        }
    }

    pub fn forward(&self, t: &mut Tape, p: &Bound, f_b: Var, f_br: Var, f_c: Var) -> Result<Prediction> {
        let x = t.concat(&[f_b, f_br, f_c])?;
        let logits = self.fc_p.forward(t, p, x)?;
        let p_i = t.sigmoid(logits);
        let xb = t.concat(&[f_b, f_br])?;
        let lb = self.fc_pb.forward(t, p, xb)?;
        let b_i = t.sigmoid(lb);
        let p_hoi = t.mul_rows(p_i, b_i)?;
        Ok(Prediction { p_i, b_i, p_hoi })
    }
}

fn check_targets(pred_shape: &[usize], target: &Tensor) -> Result<()> {
    if pred_shape != target.shape() {
        return Err(HoiError::format(
            "sce_loss",
            format!("prediction {pred_shape:?} vs target {:?}", target.shape()),
        ));
    }
    if let Some(v) = target.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(HoiError::format("sce_loss", format!("target {v} is not binary")));
    }
    Ok(())
}

/// Loss of one entry and its derivative with respect to `p`.
///
/// `CE = −[t ln p + (1−t) ln(1−p)]`, `RCE = −[p ln t + (1−p) ln(1−t)]` with
/// `ln 0` replaced by `rce_floor`; `p` is clamped to `[eps, 1 − eps]` and the
/// derivative is zero where the clamp is active.
pub fn sce_term(p: f64, target: f64, cfg: &LossConfig) -> (f64, f64) {
    let clamped = !(cfg.eps..=1.0 - cfg.eps).contains(&p);
    let pc = p.clamp(cfg.eps, 1.0 - cfg.eps);
    let a = cfg.rce_floor;
    let (ce, dce, rce, drce) = if target == 1.0 {
        (-pc.ln(), -1.0 / pc, -(1.0 - pc) * a, a)
    } else {
        (-(1.0 - pc).ln(), 1.0 / (1.0 - pc), -pc * a, -a)
    };
    let value = cfg.alpha * ce + cfg.beta * rce;
    let deriv = if clamped {
        0.0
    } else {
        cfg.alpha * dce + cfg.beta * drce
    };
    (value, deriv)
}

/// Mean over every entry of `α·CE + β·RCE`.
pub fn sce_loss_value(pred: &Tensor, target: &Tensor, cfg: &LossConfig) -> Result<f64> {
    check_targets(pred.shape(), target)?;
    let total: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| sce_term(p, t, cfg).0)
        .sum();
    Ok(total / pred.numel() as f64)
}

/// Recorded version of [`sce_loss_value`].
pub fn sce_loss(t: &mut Tape, pred: Var, target: &Tensor, cfg: &LossConfig) -> Result<Var> {
    check_targets(t.shape(pred), target)?;
    let tv = target.data().to_vec();
    let terms = t.pointwise(pred, |i, p| sce_term(p, tv[i], cfg));
    Ok(t.mean(terms))
}

/// `T · σ(k · (x − ω))`.
pub fn lis(x: f64, cfg: &LisConfig) -> f64 {
    let t = cfg
        .t
        .unwrap_or_else(|| 1.0 / sigmoid_scalar(cfg.k * (1.0 - cfg.omega)));
    t * sigmoid_scalar(cfg.k * (x - cfg.omega))
}

/// `p_HOI · lis(human) · lis(object)`; human-only pairs omit the object factor.
pub fn score_final(p_hoi: &[f64], human_conf: f64, object_conf: Option<f64>, cfg: &LisConfig) -> Vec<f64> {
    let mut w = lis(human_conf, cfg);
    if let Some(o) = object_conf {
        w *= lis(o, cfg);
    }
    p_hoi.iter().map(|p| p * w).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_value() {
        let cfg = LossConfig::default();
        let v = sce_loss_value(&Tensor::vector(&[0.5]), &Tensor::vector(&[1.0]), &cfg).unwrap();
        assert!((v - 1.34657).abs() < 1e-5, "{v}");
    }

    #[test]
    fn non_binary_target_rejected() {
        let cfg = LossConfig::default();
        assert!(sce_loss_value(&Tensor::vector(&[0.5]), &Tensor::vector(&[0.3]), &cfg).is_err());
    }

    #[test]
    fn lis_anchor() {
        let cfg = LisConfig::default();
        assert!((lis(1.0, &cfg) - 1.0).abs() < 1e-15);
        let norm = 1.0 / sigmoid_scalar(12.0 * 0.7);
        assert!((lis(0.3, &cfg) - 0.5 * norm).abs() < 1e-15);
    }
}
