//! Model, loss and score-shaping configuration.

use hoi_tensor::kernels::ConvGeometry;
use serde::{Deserialize, Serialize};

use crate::error::{HoiError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GuidanceMode {
    /// `f_GQ = f_Q ∘ f_S ∘ f_W`.
    Product,
    /// `f_GQ = FC(f_Q ‖ f_S ‖ f_W)`.
    Concat,
    /// No spatial or semantic input: `f_GQ = f_Q`, `f_BR = f_B`.
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Pair feature width D.
    pub feature_dim: usize,
    pub heads: usize,
    pub layers: usize,
    /// Side of the two-channel spatial map.
    pub spatial_size: usize,
    pub num_classes: usize,
    /// Object categories are `1..=num_categories`; 0 is the human.
    pub num_categories: u32,
    pub embed_dim: usize,
    pub image_channels: usize,
    /// Output channels of the 3×3 stride-2 backbone convolutions.
    pub backbone_channels: Vec<usize>,
    /// ROI pooling grid side for entity features.
    pub roi_size: usize,
    /// Output channels of the two 5×5 stride-2 spatial-map convolutions.
    pub spatial_channels: [usize; 2],
    pub guidance: GuidanceMode,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feature_dim: 64,
            heads: 2,
            layers: 2,
            spatial_size: 64,
            num_classes: 6,
            num_categories: 4,
            embed_dim: 50,
            image_channels: 3,
            backbone_channels: vec![16, 32, 64],
            roi_size: 5,
            spatial_channels: [32, 64],
            guidance: GuidanceMode::Product,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn feature_channels(&self) -> usize {
        *self.backbone_channels.last().unwrap_or(&self.image_channels)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(HoiError::Config(m));
        let positive = [
            ("feature_dim", self.feature_dim),
            ("heads", self.heads),
            ("layers", self.layers),
            ("num_classes", self.num_classes),
            ("embed_dim", self.embed_dim),
            ("image_channels", self.image_channels),
            ("roi_size", self.roi_size),
            ("spatial_channels[0]", self.spatial_channels[0]),
            ("spatial_channels[1]", self.spatial_channels[1]),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return err(format!("{name} must be positive"));
        }
        if self.backbone_channels.is_empty() || self.backbone_channels.contains(&0) {
            return err("backbone_channels must be non-empty and positive".into());
        }
        if !self.feature_dim.is_multiple_of(self.heads) {
            return err(format!(
                "feature_dim {} is not divisible by heads {}",
                self.feature_dim, self.heads
            ));
        }
        if !self.feature_channels().is_multiple_of(self.heads) {
            return err(format!(
                "feature channels {} are not divisible by heads {}",
                self.feature_channels(),
                self.heads
            ));
        }
        if self.feature_dim / self.heads < 2 {
            return err("head width feature_dim / heads must be at least 2".into());
        }
        let first = ConvGeometry::new(2, self.spatial_size, self.spatial_size, 5, 5, 2, 0);
        let second = first.and_then(|g| ConvGeometry::new(1, g.out_h, g.out_w, 5, 5, 2, 0));
        if second.is_none() {
            return err(format!(
                "spatial_size {} too small for two 5x5 stride-2 convolutions",
                self.spatial_size
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    /// Value substituted for `log 0` in the reverse term.
    pub rce_floor: f64,
    /// Predictions are clamped to `[eps, 1 − eps]`.
    pub eps: f64,
    /// Adds an interaction/no-interaction loss on `b_I`.
    pub proposal_loss: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.5,
            beta: 0.5,
            rce_floor: -4.0,
            eps: 1e-7,
            proposal_loss: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 || (self.alpha == 0.0 && self.beta == 0.0) {
            return Err(HoiError::Config(format!(
                "alpha {} and beta {} must be non-negative and not both zero",
                self.alpha, self.beta
            )));
        }
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return Err(HoiError::Config(format!("eps {} outside (0, 0.5)", self.eps)));
        }
        Ok(())
    }
}

/// `lis(x) = T · σ(k · (x − omega))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LisConfig {
    /// Scale; `None` picks `1 / σ(k · (1 − omega))` so that `lis(1) = 1`.
    pub t: Option<f64>,
    pub k: f64,
    pub omega: f64,
}

impl Default for LisConfig {
    fn default() -> Self {
        LisConfig {
            t: None,
            k: 12.0,
            omega: 0.3,
        }
    }
}

impl LisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k <= 0.0 || !(0.0..=1.0).contains(&self.omega) || self.t.is_some_and(|t| t <= 0.0) {
            return Err(HoiError::Config(format!(
                "lis needs k > 0, omega in [0, 1], T > 0; got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    pub human_threshold: f64,
    pub object_threshold: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            human_threshold: 0.6,
            object_threshold: 0.3,
        }
    }
}
