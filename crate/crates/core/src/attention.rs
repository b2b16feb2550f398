//! Pairwise attention over the feature map and its multi-head, multi-layer
//! stack.
//!
//! Each head owns a contiguous slice of the feature-map channels and of the
//! query. A layer's output is the concatenation of its heads and becomes the
//! next layer's query; every layer reads the same feature map.

use hoi_tensor::{Tape, Var};
use rand::Rng;

use crate::error::{HoiError, Result};
use crate::layers::{Conv, LayerNorm, Linear};
use crate::params::{Bound, ParamStore};

/// One TX head: separate 1×1 key and value convolutions, scaled dot-product
/// attention, then two residual updates each followed by layer norm.
#[derive(Clone, Debug)]
pub struct TxHead {
    pub conv_k: Conv,
    pub conv_v: Conv,
    pub norm1: LayerNorm,
    pub fc_c: Linear,
    pub norm2: LayerNorm,
    pub dim: usize,
}

/// Intermediate values of one head, all rows per pair.
#[derive(Clone, Copy, Debug)]
pub struct HeadOutput {
    /// `[P, H·W]` attention weights.
    pub attention: Var,
    /// `[P, dim]` attention-weighted sum of values, before the residuals.
    pub context: Var,
    /// `[P, dim]` final head output.
    pub output: Var,
}

impl TxHead {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        channels: usize,
        dim: usize,
    ) -> Self {
        TxHead {
            conv_k: Conv::new(store, rng, &format!("{name}.key"), channels, dim, 1, 1, 0),
            conv_v: Conv::new(store, rng, &format!("{name}.value"), channels, dim, 1, 1, 0),
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim),
            fc_c: Linear::new(store, rng, &format!("{name}.fc"), dim, dim),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim),
            dim,
        }
    }

    /// Keys and values as `[dim, H·W]` matrices.
    pub fn key_value(&self, t: &mut Tape, p: &Bound, f: Var) -> Result<(Var, Var)> {
        let [_, h, w] = *t.shape(f) else {
            return Err(HoiError::format("attention", "feature map must be C x H x W"));
        };
        let k = self.conv_k.forward(t, p, f)?;
        let k = t.reshape(k, &[self.dim, h * w])?;
        let v = self.conv_v.forward(t, p, f)?;
        let v = t.reshape(v, &[self.dim, h * w])?;
        Ok((k, v))
    }

    /// `f` is this head's channel slice of the map, `q` its `[P, dim]` query.
    pub fn forward(&self, t: &mut Tape, p: &Bound, f: Var, q: Var, temperature: f64) -> Result<HeadOutput> {
        let (k, v) = self.key_value(t, p, f)?;
        let attention = attend(t, q, k, temperature)?;
        let context = aggregate(t, attention, v)?;
        let output = self.update(t, p, context, q)?;
        Ok(HeadOutput {
            attention,
            context,
            output,
        })
    }

    /// `x = LN(c + q)`, then `LN(x + FC_C(x))`.
    pub fn update(&self, t: &mut Tape, p: &Bound, context: Var, q: Var) -> Result<Var> {
        let r = t.add(context, q)?;
        let x = self.norm1.forward(t, p, r)?;
        let y = self.fc_c.forward(t, p, x)?;
        let r2 = t.add(x, y)?;
        self.norm2.forward(t, p, r2)
    }
}

/// `softmax(q · K / (√d · temperature))` over the flattened grid; `q` is
/// `[P, d]`, `k` is `[d, H·W]`.
pub fn attend(t: &mut Tape, q: Var, k: Var, temperature: f64) -> Result<Var> {
    let d = t.shape(q)[1];
    let logits = t.matmul(q, k)?;
    let logits = t.scale(logits, 1.0 / ((d as f64).sqrt() * temperature));
    Ok(t.softmax(logits)?)
}

/// `Σ_cells A ⊙ F_V` per pair: `[P, H·W] · [d, H·W]ᵀ`.
pub fn aggregate(t: &mut Tape, attention: Var, v: Var) -> Result<Var> {
    let vt = t.transpose(v)?;
    Ok(t.matmul(attention, vt)?)
}

#[derive(Clone, Debug)]
pub struct TxStack {
    /// `layers[l][h]`.
    pub layers: Vec<Vec<TxHead>>,
    pub channels_per_head: usize,
    pub dim_per_head: usize,
}

#[derive(Clone, Debug)]
pub struct StackOutput {
    /// `[P, D]`.
    pub output: Var,
    /// Per layer, per head, `[P, H·W]`.
    pub attention: Vec<Vec<Var>>,
}

impl TxStack {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        channels: usize,
        dim: usize,
        heads: usize,
        layers: usize,
    ) -> Result<Self> {
        if heads == 0 || layers == 0 || !dim.is_multiple_of(heads) || !channels.is_multiple_of(heads) {
            return Err(HoiError::Config(format!(
                "stack of {heads} heads x {layers} layers over {channels} channels, width {dim}"
            )));
        }
        let (ch, dh) = (channels / heads, dim / heads);
        let layers = (0..layers)
            .map(|l| {
                (0..heads)
                    .map(|h| TxHead::new(store, rng, &format!("tx.l{l}.h{h}"), ch, dh))
                    .collect()
            })
            .collect();
        Ok(TxStack {
            layers,
            channels_per_head: ch,
            dim_per_head: dh,
        })
    }

    pub fn heads(&self) -> usize {
        self.layers[0].len()
    }

    pub fn forward(&self, t: &mut Tape, p: &Bound, f: Var, q: Var, temperature: f64) -> Result<StackOutput> {
        let heads = self.heads();
        let slices: Vec<Var> = if heads == 1 {
            vec![f]
        } else {
            (0..heads)
                .map(|h| t.slice_rows(f, h * self.channels_per_head, self.channels_per_head))
                .collect::<hoi_tensor::Result<_>>()?
        };
        let mut query = q;
        let mut attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mut outs = Vec::with_capacity(heads);
            let mut maps = Vec::with_capacity(heads);
            for (h, head) in layer.iter().enumerate() {
                let qh = if heads == 1 {
                    query
                } else {
                    t.slice_cols(query, h * self.dim_per_head, self.dim_per_head)?
                };
                let o = head.forward(t, p, slices[h], qh, temperature)?;
                outs.push(o.output);
                maps.push(o.attention);
            }
            query = if heads == 1 { outs[0] } else { t.concat(&outs)? };
            attention.push(maps);
        }
        Ok(StackOutput {
            output: query,
            attention,
        })
    }
}
