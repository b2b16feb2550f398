//! The full pair model: backbone, baseline fusion, guidance, attention stack
//! and prediction heads recorded on one tape.

use hoi_tensor::{Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::TxStack;
use crate::backbone::{baseline_fuse, global_context, Backbone, EntityEncoder, FeatureMap};
use crate::config::{GuidanceMode, ModelConfig};
use crate::data::{Detection, SceneAnnotation};
use crate::error::{HoiError, Result};
use crate::guidance::{guide, guide_concat, pair_frame, rasterize_spatial_map, SemanticEncoder, SpatialEncoder};
use crate::head::{Prediction, PredictionHead};
use crate::layers::Linear;
use crate::params::{Bound, ParamStore};

/// A candidate pair: indices into the scene's humans and objects.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PairIndex {
    pub human: usize,
    /// `None` for the human-only candidate.
    pub object: Option<usize>,
}

/// For each human, one pair per object followed by its human-only pair.
pub fn enumerate_pairs(humans: usize, objects: usize) -> Vec<PairIndex> {
    (0..humans)
        .flat_map(|h| {
            (0..objects)
                .map(move |o| PairIndex {
                    human: h,
                    object: Some(o),
                })
                .chain(std::iter::once(PairIndex {
                    human: h,
                    object: None,
                }))
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct ForwardOptions {
    /// Replaces `f_S` and `f_W` with all-ones vectors.
    pub unit_guidance: bool,
    /// Divides every attention logit; values near 0 force one-hot maps.
    pub temperature: f64,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        ForwardOptions {
            unit_guidance: false,
            temperature: 1.0,
        }
    }
}

/// Recorded intermediate values, rows per pair.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub pairs: Vec<PairIndex>,
    pub feature_map: FeatureMap,
    pub f_b: Var,
    pub f_q: Var,
    pub f_gq: Var,
    pub f_br: Var,
    pub f_c: Var,
    pub prediction: Prediction,
    /// Per layer, per head, `[P, H·W]`.
    pub attention: Vec<Vec<Var>>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub backbone: Backbone,
    pub human_encoder: EntityEncoder,
    pub object_encoder: EntityEncoder,
    pub global_proj: Linear,
    pub fc_b: Linear,
    pub fc_t: Linear,
    pub spatial: SpatialEncoder,
    pub semantic: SemanticEncoder,
    pub stack: TxStack,
    pub head: PredictionHead,
    /// Present only in concatenation mode; created last so every other
    /// parameter is initialized identically across guidance modes.
    pub guide_fc: Option<Linear>,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut store = ParamStore::new();
        let c = config.feature_channels();
        let d = config.feature_dim;
        let backbone = Backbone::new(&mut store, &mut rng, config.image_channels, &config.backbone_channels);
        let human_encoder = EntityEncoder::new(&mut store, &mut rng, "human", c, d, config.roi_size);
        let object_encoder = EntityEncoder::new(&mut store, &mut rng, "object", c, d, config.roi_size);
        let global_proj = Linear::new(&mut store, &mut rng, "global.proj", c, d);
        let fc_b = Linear::new(&mut store, &mut rng, "baseline.fc_b", 3 * d, d);
        let fc_t = Linear::new(&mut store, &mut rng, "query.fc_t", 2 * d, d);
        let spatial = SpatialEncoder::new(&mut store, &mut rng, config.spatial_channels, d);
        let semantic = SemanticEncoder::new(&mut store, &mut rng, config.num_categories, config.embed_dim, d);
        let stack = TxStack::new(&mut store, &mut rng, c, d, config.heads, config.layers)?;
        let head = PredictionHead::new(&mut store, &mut rng, d, config.num_classes);
        let guide_fc = (config.guidance == GuidanceMode::Concat)
            .then(|| Linear::new(&mut store, &mut rng, "guidance.fc", 3 * d, d));
        Ok(Model {
            config,
            params: store,
            backbone,
            human_encoder,
            object_encoder,
            global_proj,
            fc_b,
            fc_t,
            spatial,
            semantic,
            stack,
            head,
            guide_fc,
        })
    }

    /// Same parameters evaluated under another guidance mode. Switching to
    /// concatenation requires a model built in that mode.
    pub fn with_guidance(&self, mode: GuidanceMode) -> Result<Self> {
        if mode == GuidanceMode::Concat && self.guide_fc.is_none() {
            return Err(HoiError::Config(
                "concatenation guidance needs its projection; build the model in that mode".into(),
            ));
        }
        let mut m = self.clone();
        m.config.guidance = mode;
        Ok(m)
    }

    pub fn forward(
        &self,
        t: &mut Tape,
        p: &Bound,
        image: &Tensor,
        scene: &SceneAnnotation,
        opts: &ForwardOptions,
    ) -> Result<ForwardOutput> {
        if scene.humans.is_empty() {
            return Err(HoiError::format(&scene.image_id, "no humans to pair"));
        }
        let d = self.config.feature_dim;
        let img = t.constant(image.clone());
        let fmap = self.backbone.forward(t, p, img)?;

        let human_boxes: Vec<_> = scene.humans.iter().map(|h| h.bbox).collect();
        let object_boxes: Vec<_> = scene.objects.iter().map(|o| o.bbox).collect();
        let f_h_all = self.human_encoder.forward(t, p, &fmap, &human_boxes)?;
        let f_o_all = if object_boxes.is_empty() {
            None
        } else {
            Some(self.object_encoder.forward(t, p, &fmap, &object_boxes)?)
        };
        let f_g_one = global_context(t, p, &self.global_proj, &fmap)?;

        let pairs = enumerate_pairs(scene.humans.len(), scene.objects.len());
        let n = pairs.len();
        let hidx: Vec<_> = pairs.iter().map(|q| Some(q.human)).collect();
        let oidx: Vec<_> = pairs.iter().map(|q| q.object).collect();
        let f_h = t.gather_rows(f_h_all, &hidx)?;
        let f_o = match f_o_all {
            Some(all) => t.gather_rows(all, &oidx)?,
            None => t.constant(Tensor::zeros([n, d])),
        };
        let f_g = t.gather_rows(f_g_one, &vec![Some(0); n])?;
        let f_b = baseline_fuse(t, p, &self.fc_b, f_h, f_o, f_g)?;
        let ho = t.concat(&[f_h, f_o])?;
        let f_q = self.fc_t.forward(t, p, ho)?;

        let (f_gq, f_br) = match self.config.guidance {
            GuidanceMode::None => (f_q, f_b),
            mode => {
                let (f_s, f_w) = if opts.unit_guidance {
                    let ones = t.constant(Tensor::ones([n, d]));
                    (ones, ones)
                } else {
                    let maps = self.spatial_maps(&scene.humans, &scene.objects, &pairs)?;
                    let maps = t.constant(maps);
                    let f_s = self.spatial.forward(t, p, maps)?;
                    let cats: Vec<_> = pairs
                        .iter()
                        .map(|q| q.object.map(|o| scene.objects[o].category))
                        .collect();
                    let f_w = self.semantic.forward(t, p, &cats)?;
                    (f_s, f_w)
                };
                let f_gq = match mode {
                    GuidanceMode::Concat => {
                        let fc = self.guide_fc.as_ref().expect("built in concatenation mode");
                        guide_concat(t, p, fc, f_q, f_s, f_w)?
                    }
                    _ => guide(t, f_q, f_s, f_w)?,
                };
                (f_gq, guide(t, f_b, f_s, f_w)?)
            }
        };

        let stacked = self.stack.forward(t, p, fmap.var, f_gq, opts.temperature)?;
        let prediction = self.head.forward(t, p, f_b, f_br, stacked.output)?;
        Ok(ForwardOutput {
            pairs,
            feature_map: fmap,
            f_b,
            f_q,
            f_gq,
            f_br,
            f_c: stacked.output,
            prediction,
            attention: stacked.attention,
        })
    }

    /// `[P, 2, s, s]` maps, one per pair.
    pub fn spatial_maps(
        &self,
        humans: &[Detection],
        objects: &[Detection],
        pairs: &[PairIndex],
    ) -> Result<Tensor> {
        let s = self.config.spatial_size;
        let mut data = Vec::with_capacity(pairs.len() * 2 * s * s);
        for q in pairs {
            let h = &humans[q.human].bbox;
            let o = q.object.map(|o| &objects[o].bbox);
            let frame = pair_frame(h, o);
            data.extend_from_slice(rasterize_spatial_map(h, o, &frame, s)?.data());
        }
        Ok(Tensor::new([pairs.len(), 2, s, s], data)?)
    }

    /// Forward pass with every parameter constant.
    pub fn evaluate(&self, image: &Tensor, scene: &SceneAnnotation, opts: &ForwardOptions) -> Result<(Tape, ForwardOutput)> {
        let mut t = Tape::new();
        let p = self.params.bind(&mut t, false);
        let out = self.forward(&mut t, &p, image, scene, opts)?;
        Ok((t, out))
    }
}
