//! Spatial and semantic guidance of the pair query.

use std::fs;
use std::path::Path;

use hoi_tensor::{Tape, Tensor, Var};
use rand::Rng;

use crate::data::BBox;
use crate::error::{HoiError, Result};
use crate::layers::{Conv, Linear};
use crate::params::{Bound, ParamId, ParamStore};

/// Reference frame of a pair: the union box grown to a square.
pub fn pair_frame(human: &BBox, object: Option<&BBox>) -> BBox {
    object
        .map_or(*human, |o| human.union(o))
        .expand_to_square()
}

/// Two-channel `s × s` binary map: channel 0 marks the human box, channel 1
/// the object box (all zero for human-only pairs). Cell `(i, j)` is set when
/// its center, in frame coordinates, lies in the half-open box.
pub fn rasterize_spatial_map(
    human: &BBox,
    object: Option<&BBox>,
    frame: &BBox,
    s: usize,
) -> Result<Tensor> {
    let (fw, fh) = (frame.width(), frame.height());
    if !(fw > 0.0 && fh > 0.0 && fw.is_finite() && fh.is_finite()) || s == 0 {
        return Err(HoiError::format(
            "spatial map",
            format!("degenerate union frame {:?}", frame.to_array()),
        ));
    }
    let mut data = vec![0.0; 2 * s * s];
    let mut paint = |channel: usize, b: &BBox| {
        // box edges in grid units relative to the frame
        let gx1 = (b.x1 - frame.x1) / fw * s as f64;
        let gx2 = (b.x2 - frame.x1) / fw * s as f64;
        let gy1 = (b.y1 - frame.y1) / fh * s as f64;
        let gy2 = (b.y2 - frame.y1) / fh * s as f64;
        for i in 0..s {
            let cy = i as f64 + 0.5;
            if cy < gy1 || cy >= gy2 {
                continue;
            }
            for j in 0..s {
                let cx = j as f64 + 0.5;
                if cx >= gx1 && cx < gx2 {
                    data[(channel * s + i) * s + j] = 1.0;
                }
            }
        }
    };
    paint(0, human);
    if let Some(o) = object {
        paint(1, o);
    }
    Ok(Tensor::new([2, s, s], data)?)
}

/// Two 5×5 stride-2 convolutions with relu, global average pool, `FC_S`.
#[derive(Clone, Debug)]
pub struct SpatialEncoder {
    pub conv1: Conv,
    pub conv2: Conv,
    pub fc: Linear,
}

impl SpatialEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        channels: [usize; 2],
        dim: usize,
    ) -> Self {
        SpatialEncoder {
            conv1: Conv::new(store, rng, "spatial.conv1", 2, channels[0], 5, 2, 0),
            conv2: Conv::new(store, rng, "spatial.conv2", channels[0], channels[1], 5, 2, 0),
            fc: Linear::new(store, rng, "spatial.fc", channels[1], dim),
        }
    }

    /// `maps` is `[P, 2, s, s]`; returns `[P, D]`.
    pub fn forward(&self, t: &mut Tape, p: &Bound, maps: Var) -> Result<Var> {
        let x = self.conv1.forward(t, p, maps)?;
        let x = t.relu(x);
        let x = self.conv2.forward(t, p, x)?;
        let x = t.relu(x);
        let x = t.global_avg_pool(x)?;
        self.fc.forward(t, p, x)
    }
}

/// Embedding lookup for (human, object category) and the projection `FC_W`.
///
/// The human vector is fixed (frozen); category `c` uses table row `c − 1`
/// and the human-only pair uses the extra last row.
#[derive(Clone, Debug)]
pub struct SemanticEncoder {
    pub human: ParamId,
    pub table: ParamId,
    pub fc: Linear,
    pub num_categories: u32,
    pub embed_dim: usize,
}

impl SemanticEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        num_categories: u32,
        embed_dim: usize,
        dim: usize,
    ) -> Self {
        let human = store.add_frozen(
            "semantic.human",
            hoi_tensor::init::uniform_fan_in(rng, &[1, embed_dim], 1),
        );
        let table = store.add_uniform(
            rng,
            "semantic.table",
            &[num_categories as usize + 1, embed_dim],
            1,
        );
        SemanticEncoder {
            human,
            table,
            fc: Linear::new(store, rng, "semantic.fc", 2 * embed_dim, dim),
            num_categories,
            embed_dim,
        }
    }

    pub fn row(&self, category: Option<u32>) -> Result<usize> {
        match category {
            None => Ok(self.num_categories as usize),
            Some(c) if c >= 1 && c <= self.num_categories => Ok(c as usize - 1),
            Some(c) => Err(HoiError::OutOfVocabulary(c)),
        }
    }

    /// One row per pair; `None` marks a human-only pair.
    pub fn forward(&self, t: &mut Tape, p: &Bound, objects: &[Option<u32>]) -> Result<Var> {
        let rows = objects
            .iter()
            .map(|&c| self.row(c).map(Some))
            .collect::<Result<Vec<_>>>()?;
        let h = t.gather_rows(p.var(self.human), &vec![Some(0); objects.len()])?;
        let o = t.gather_rows(p.var(self.table), &rows)?;
        let x = t.concat(&[h, o])?;
        self.fc.forward(t, p, x)
    }

    /// Reads `category_id v1 .. vE` lines; id 0 sets the human vector.
    /// Blank lines and lines starting with `#` are skipped.
    pub fn load_embeddings(&self, store: &mut ParamStore, path: &Path) -> Result<usize> {
        let text = fs::read_to_string(path).map_err(|e| HoiError::io(path, e))?;
        let ctx = |line: usize| format!("{}:{}", path.display(), line + 1);
        let mut loaded = 0;
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split_whitespace();
            let id: u32 = fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| HoiError::format(ctx(ln), "expected a category id"))?;
            let values = fields
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| HoiError::format(ctx(ln), e.to_string()))?;
            if values.len() != self.embed_dim {
                return Err(HoiError::format(
                    ctx(ln),
                    format!("expected {} values, found {}", self.embed_dim, values.len()),
                ));
            }
            let (target, row) = if id == 0 {
                (self.human, 0)
            } else {
                (self.table, self.row(Some(id))?)
            };
            let e = self.embed_dim;
            store.get_mut(target).data_mut()[row * e..(row + 1) * e].copy_from_slice(&values);
            loaded += 1;
        }
        Ok(loaded)
    }
}

/// `f_Q ∘ f_S ∘ f_W`.
pub fn guide(t: &mut Tape, q: Var, s: Var, w: Var) -> Result<Var> {
    let qs = t.mul(q, s)?;
    Ok(t.mul(qs, w)?)
}

/// `FC(f_Q ‖ f_S ‖ f_W)`.
pub fn guide_concat(t: &mut Tape, p: &Bound, fc: &Linear, q: Var, s: Var, w: Var) -> Result<Var> {
    let x = t.concat(&[q, s, w])?;
    fc.forward(t, p, x)
}
