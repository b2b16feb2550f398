//! Scoring scenes with a trained model and dumping attention maps.

use std::fmt::Write as _;

use hoi_tensor::Tensor;

use crate::config::{InferenceConfig, LisConfig};
use crate::data::{Sample, SceneAnnotation};
use crate::error::Result;
use crate::eval::{ImagePredictions, PairPrediction};
use crate::head::score_final;
use crate::model::{ForwardOptions, Model};

/// Keeps detections at or above the per-role confidence thresholds. Labels
/// are dropped; inference never reads them.
pub fn filter_detections(scene: &SceneAnnotation, cfg: &InferenceConfig) -> SceneAnnotation {
    SceneAnnotation {
        image_id: scene.image_id.clone(),
        height: scene.height,
        width: scene.width,
        humans: scene
            .humans
            .iter()
            .filter(|d| d.confidence >= cfg.human_threshold)
            .copied()
            .collect(),
        objects: scene
            .objects
            .iter()
            .filter(|d| d.confidence >= cfg.object_threshold)
            .copied()
            .collect(),
        interactions: Vec::new(),
    }
}

/// Final per-class scores for every candidate pair of one scene.
pub fn predict_scene(
    model: &Model,
    image: &Tensor,
    scene: &SceneAnnotation,
    lis: &LisConfig,
    cfg: &InferenceConfig,
) -> Result<ImagePredictions> {
    let kept = filter_detections(scene, cfg);
    if kept.humans.is_empty() {
        return Ok(ImagePredictions {
            image_id: scene.image_id.clone(),
            pairs: Vec::new(),
        });
    }
    let (t, out) = model.evaluate(image, &kept, &ForwardOptions::default())?;
    let p_hoi = t.value(out.prediction.p_hoi);
    let k = model.config.num_classes;
    let pairs = out
        .pairs
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let h = &kept.humans[q.human];
            let o = q.object.map(|o| &kept.objects[o]);
            PairPrediction {
                human_box: h.bbox.to_array(),
                object_box: o.map(|o| o.bbox.to_array()),
                scores: score_final(
                    &p_hoi.data()[i * k..(i + 1) * k],
                    h.confidence,
                    o.map(|o| o.confidence),
                    lis,
                ),
            }
        })
        .collect();
    Ok(ImagePredictions {
        image_id: scene.image_id.clone(),
        pairs,
    })
}

pub fn predict_all(
    model: &Model,
    samples: &[Sample],
    lis: &LisConfig,
    cfg: &InferenceConfig,
) -> Result<Vec<ImagePredictions>> {
    use rayon::prelude::*;
    samples
        .par_iter()
        .map(|s| predict_scene(model, &s.image, &s.scene, lis, cfg))
        .collect()
}

/// Attention maps as text: one `H × W` grid per (pair, layer, head), rows of
/// space-separated values, maps separated by a blank line. Maps are ordered
/// by pair, then layer, then head.
pub fn attention_dump(model: &Model, image: &Tensor, scene: &SceneAnnotation) -> Result<String> {
    let (t, out) = model.evaluate(image, scene, &ForwardOptions::default())?;
    let (h, w) = (out.feature_map.height, out.feature_map.width);
    let mut s = String::new();
    for pair in 0..out.pairs.len() {
        for layer in &out.attention {
            for &head in layer {
                let a = t.value(head);
                let row = &a.data()[pair * h * w..(pair + 1) * h * w];
                if !s.is_empty() {
                    s.push('\n');
                }
                for y in 0..h {
                    let line: Vec<String> = row[y * w..(y + 1) * w].iter().map(|v| format!("{v:e}")).collect();
                    let _ = writeln!(s, "{}", line.join(" "));
                }
            }
        }
    }
    Ok(s)
}

/// Parses [`attention_dump`] output back into grids.
pub fn parse_attention_dump(text: &str) -> Vec<Vec<Vec<f64>>> {
    text.split("\n\n")
        .filter(|b| !b.trim().is_empty())
        .map(|block| {
            block
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| l.split_whitespace().filter_map(|v| v.parse().ok()).collect())
                .collect()
        })
        .collect()
}
