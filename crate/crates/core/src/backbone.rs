//! Convolutional stub backbone and the baseline pair features.

use hoi_tensor::{Tape, Var};
use rand::Rng;

use crate::data::BBox;
use crate::error::{HoiError, Result};
use crate::layers::{Conv, Linear};
use crate::params::{Bound, ParamStore};

pub const MIN_IMAGE_SIDE: usize = 16;

/// A recorded `C × H × W` feature map and the pixel-to-cell scale.
#[derive(Clone, Copy, Debug)]
pub struct FeatureMap {
    pub var: Var,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub scale: f64,
}

/// 3×3 stride-2 convolutions with padding 1, each followed by relu.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub convs: Vec<Conv>,
}

impl Backbone {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        in_channels: usize,
        channels: &[usize],
    ) -> Self {
        let mut prev = in_channels;
        let convs = channels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let conv = Conv::new(store, rng, &format!("backbone.conv{i}"), prev, c, 3, 2, 1);
                prev = c;
                conv
            })
            .collect();
        Backbone { convs }
    }

    pub fn forward(&self, t: &mut Tape, p: &Bound, image: Var) -> Result<FeatureMap> {
        let [_, h, w] = *t.shape(image) else {
            return Err(HoiError::format(
                "backbone",
                format!("image must be C x H x W, got {:?}", t.shape(image)),
            ));
        };
        if h < MIN_IMAGE_SIDE || w < MIN_IMAGE_SIDE {
            return Err(HoiError::format(
                "backbone",
                format!("image {h}x{w} smaller than {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}"),
            ));
        }
        let mut x = image;
        for conv in &self.convs {
            let y = conv.forward(t, p, x)?;
            x = t.relu(y);
        }
        let [c, fh, fw] = *t.shape(x) else {
            unreachable!("conv keeps rank 3")
        };
        Ok(FeatureMap {
            var: x,
            channels: c,
            height: fh,
            width: fw,
            scale: fw as f64 / w as f64,
        })
    }
}

/// Pixel box to feature-cell region: scaled by `scale`, then grown to at
/// least one cell per side while staying inside the map.
pub fn feature_region(b: &BBox, scale: f64, height: usize, width: usize) -> [f64; 4] {
    let axis = |lo: f64, hi: f64, extent: usize| {
        let extent = extent as f64;
        let mut lo = (lo * scale).clamp(0.0, extent);
        let mut hi = (hi * scale).clamp(0.0, extent);
        if hi - lo < 1.0 {
            let mid = (lo + hi) / 2.0;
            lo = (mid - 0.5).clamp(0.0, extent - 1.0);
            hi = lo + 1.0;
        }
        (lo, hi)
    };
    let (x1, x2) = axis(b.x1, b.x2, width);
    let (y1, y2) = axis(b.y1, b.y2, height);
    [x1, y1, x2, y2]
}

/// ROI pool, one residual block, global average pool, projection to D.
#[derive(Clone, Debug)]
pub struct EntityEncoder {
    pub conv_a: Conv,
    pub conv_b: Conv,
    pub proj: Linear,
    pub roi_size: usize,
}

impl EntityEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        channels: usize,
        dim: usize,
        roi_size: usize,
    ) -> Self {
        EntityEncoder {
            conv_a: Conv::new(store, rng, &format!("{name}.res_a"), channels, channels, 3, 1, 1),
            conv_b: Conv::new(store, rng, &format!("{name}.res_b"), channels, channels, 3, 1, 1),
            proj: Linear::new(store, rng, &format!("{name}.proj"), channels, dim),
            roi_size,
        }
    }

    /// One row of length D per box.
    pub fn forward(&self, t: &mut Tape, p: &Bound, f: &FeatureMap, boxes: &[BBox]) -> Result<Var> {
        let regions: Vec<[f64; 4]> = boxes
            .iter()
            .map(|b| feature_region(b, f.scale, f.height, f.width))
            .collect();
        let pooled = t.roi_pool(f.var, &regions, self.roi_size, self.roi_size)?;
        let a = self.conv_a.forward(t, p, pooled)?;
        let a = t.relu(a);
        let b = self.conv_b.forward(t, p, a)?;
        let skip = t.add(pooled, b)?;
        let r = t.relu(skip);
        let g = t.global_avg_pool(r)?;
        self.proj.forward(t, p, g)
    }
}

/// Channel means of the whole map projected to D; `[1, D]`.
pub fn global_context(t: &mut Tape, p: &Bound, proj: &Linear, f: &FeatureMap) -> Result<Var> {
    let g = t.global_avg_pool(f.var)?;
    proj.forward(t, p, g)
}

/// `f_B = FC_B(f_H ‖ f_O ‖ f_G)`, row per pair, no nonlinearity.
pub fn baseline_fuse(
    t: &mut Tape,
    p: &Bound,
    fc_b: &Linear,
    f_h: Var,
    f_o: Var,
    f_g: Var,
) -> Result<Var> {
    let x = t.concat(&[f_h, f_o, f_g])?;
    fc_b.forward(t, p, x)
}
