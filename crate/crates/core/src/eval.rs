//! Interaction detection evaluation: pair matching, per-class AP and mAP.
//!
//! A prediction is one (human box, object box, class, score) tuple. It is a
//! true positive when it is the highest-ranked unmatched prediction whose
//! human box and object box both reach the IoU threshold with a labeled pair
//! of the same class in the same image. Among several eligible labels the
//! one with the largest `min(IoU_human, IoU_object)` is consumed.
//!
//! Human-only labels depend on the scenario: `S1` requires the predicted
//! object to be absent (`null` or `[0, 0, 0, 0]`), `S2` ignores the predicted
//! object, and `None` applies no special rule (an absent object matches only
//! an absent object, as in `S1`).
//!
//! AP is `Σ precision@r / num_gt` over the ranks `r` of true positives.
//! Classes without labels in their pool are left out of the mean and counted.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{BBox, SceneAnnotation};
use crate::error::{HoiError, Result};

/// Area of intersection over area of union under the half-open convention.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    S1,
    S2,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    /// Every image is in every class's pool.
    Default,
    /// A class's pool holds only images that contain one of its object
    /// categories; classes with human-only labels keep every image.
    Known,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchPolicy {
    pub iou_threshold: f64,
    pub scenario: Scenario,
    pub setting: Setting,
    /// Classes with fewer training labels than this are reported as rare.
    pub rare_threshold: usize,
}

impl Default for MatchPolicy {
    fn default() -> Self {
        MatchPolicy {
            iou_threshold: 0.5,
            scenario: Scenario::S1,
            setting: Setting::Default,
            rare_threshold: 10,
        }
    }
}

impl MatchPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(HoiError::Config(format!(
                "iou_threshold {} outside (0, 1)",
                self.iou_threshold
            )));
        }
        Ok(())
    }
}

/// Scored pairs of one image, as written by inference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImagePredictions {
    pub image_id: String,
    pub pairs: Vec<PairPrediction>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairPrediction {
    pub human_box: [f64; 4],
    /// `None` (or `[0, 0, 0, 0]`) for a human-only prediction.
    pub object_box: Option<[f64; 4]>,
    /// One score per class.
    pub scores: Vec<f64>,
}

pub fn save_predictions(preds: &[ImagePredictions], path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(preds).expect("plain data serializes");
    fs::write(path, text).map_err(|e| HoiError::io(path, e))
}

pub fn load_predictions(path: &Path) -> Result<Vec<ImagePredictions>> {
    let text = fs::read_to_string(path).map_err(|e| HoiError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| HoiError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// One ranked prediction for a single class.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub image: usize,
    pub image_id: String,
    pub pair: usize,
    pub human: BBox,
    pub object: Option<BBox>,
    pub score: f64,
}

/// One labeled pair for a single class.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub image: usize,
    pub human: BBox,
    pub object: Option<BBox>,
}

/// Ranking order: score descending, then image id, then pair index.
pub fn rank_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.image_id.cmp(&b.image_id))
        .then_with(|| a.pair.cmp(&b.pair))
}

/// Overlap used to pick among eligible labels; `None` when not a match.
fn match_quality(c: &Candidate, g: &GroundTruth, policy: &MatchPolicy) -> Option<f64> {
    if c.image != g.image {
        return None;
    }
    let ih = iou(&c.human, &g.human);
    if ih < policy.iou_threshold {
        return None;
    }
    match (&g.object, &c.object) {
        (Some(go), Some(co)) => {
            let io = iou(co, go);
            (io >= policy.iou_threshold).then_some(ih.min(io))
        }
        (Some(_), None) => None,
        (None, pred) => match policy.scenario {
            Scenario::S2 => Some(ih),
            Scenario::S1 | Scenario::None => pred.is_none().then_some(ih),
        },
    }
}

/// Flags each candidate TP (`true`) or FP. `candidates` must already be in
/// [`rank_order`].
pub fn match_predictions(candidates: &[Candidate], gts: &[GroundTruth], policy: &MatchPolicy) -> Result<Vec<bool>> {
    if let Some(i) = candidates
        .windows(2)
        .position(|w| rank_order(&w[0], &w[1]) == Ordering::Greater)
    {
        return Err(HoiError::Unsorted(i + 1));
    }
    let mut used = vec![false; gts.len()];
    let mut out = Vec::with_capacity(candidates.len());
    for c in candidates {
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if used[j] {
                continue;
            }
            if let Some(q) = match_quality(c, g, policy) {
                if best.is_none_or(|(_, bq)| q > bq) {
                    best = Some((j, q));
                }
            }
        }
        match best {
            Some((j, _)) => {
                used[j] = true;
                out.push(true);
            }
            None => out.push(false),
        }
    }
    Ok(out)
}

/// `Σ precision@r / num_gt` over the ranks of true positives.
pub fn average_precision(matches: &[bool], num_gt: usize) -> Result<f64> {
    let tp_total = matches.iter().filter(|&&m| m).count();
    if num_gt == 0 {
        if tp_total > 0 {
            return Err(HoiError::Evaluation("true positives without ground truth".into()));
        }
        return Ok(0.0);
    }
    if tp_total > num_gt {
        return Err(HoiError::Evaluation(format!(
            "{tp_total} true positives for {num_gt} ground-truth pairs"
        )));
    }
    let mut tp = 0usize;
    let mut sum = 0.0;
    for (r, &m) in matches.iter().enumerate() {
        if m {
            tp += 1;
            sum += tp as f64 / (r + 1) as f64;
        }
    }
    Ok(sum / num_gt as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class_id: usize,
    pub ap: f64,
    pub num_gt: usize,
    pub num_predictions: usize,
    /// `None` when no training counts were supplied.
    pub rare: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: Scenario,
    pub setting: Setting,
    pub iou_threshold: f64,
    pub map: f64,
    pub map_rare: Option<f64>,
    pub map_non_rare: Option<f64>,
    /// Classes left out of the mean because their pool holds no labels.
    pub excluded_classes: usize,
    pub classes: Vec<ClassAp>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    /// Aligned plain-text table.
    pub fn to_table(&self, class_names: &[String]) -> String {
        let mut s = String::new();
        let name = |c: usize| class_names.get(c).cloned().unwrap_or_else(|| format!("class {c}"));
        let width = (0..self.classes.len()).map(|c| name(c).len()).max().unwrap_or(5).max(5);
        let _ = writeln!(s, "{:<width$}  {:>7}  {:>6}  {:>6}  split", "class", "AP", "gt", "preds");
        for c in &self.classes {
            let ap = if c.num_gt == 0 { "-".to_string() } else { format!("{:.4}", c.ap) };
            let split = match c.rare {
                Some(true) => "rare",
                Some(false) => "non-rare",
                None => "-",
            };
            let _ = writeln!(
                s,
                "{:<width$}  {:>7}  {:>6}  {:>6}  {}",
                name(c.class_id),
                ap,
                c.num_gt,
                c.num_predictions,
                split
            );
        }
        let _ = writeln!(
            s,
            "mAP {:.4} ({:?}, {:?}, IoU {}; {} classes excluded)",
            self.map, self.scenario, self.setting, self.iou_threshold, self.excluded_classes
        );
        if let (Some(r), Some(n)) = (self.map_rare, self.map_non_rare) {
            let _ = writeln!(s, "rare {r:.4}  non-rare {n:.4}");
        }
        s
    }
}

fn parse_box(b: [f64; 4], ctx: &str) -> Result<BBox> {
    BBox::from_array(b).map_err(|e| HoiError::format(ctx, e.to_string()))
}

fn parse_object(b: Option<[f64; 4]>, ctx: &str) -> Result<Option<BBox>> {
    match b {
        None => Ok(None),
        Some(a) if a == [0.0; 4] => Ok(None),
        Some(a) => parse_box(a, ctx).map(Some),
    }
}

/// Object categories each class is labeled with in `gt`.
pub fn class_object_table(gt: &[SceneAnnotation], num_classes: usize) -> Vec<BTreeSet<u32>> {
    let mut table = vec![BTreeSet::new(); num_classes];
    for scene in gt {
        for it in &scene.interactions {
            if let (Some(o), Some(set)) = (it.object, table.get_mut(it.class)) {
                set.insert(scene.objects[o].category);
            }
        }
    }
    table
}

/// Label counts per class.
pub fn class_counts(scenes: &[SceneAnnotation], num_classes: usize) -> Vec<usize> {
    let mut c = vec![0; num_classes];
    for s in scenes {
        for it in &s.interactions {
            if it.class < num_classes {
                c[it.class] += 1;
            }
        }
    }
    c
}

/// Evaluates `preds` against `gt`. `train_counts` enables the rare split.
pub fn evaluate(
    preds: &[ImagePredictions],
    gt: &[SceneAnnotation],
    num_classes: usize,
    policy: &MatchPolicy,
    train_counts: Option<&[usize]>,
) -> Result<Report> {
    policy.validate()?;
    let index: HashMap<&str, usize> = gt
        .iter()
        .enumerate()
        .map(|(i, s)| (s.image_id.as_str(), i))
        .collect();
    if index.len() != gt.len() {
        return Err(HoiError::Evaluation("duplicate image ids in annotations".into()));
    }
    // candidates[k] and labels[k], built once over all images
    let mut candidates: Vec<Vec<Candidate>> = vec![Vec::new(); num_classes];
    let mut seen = BTreeSet::new();
    for ip in preds {
        let Some(&img) = index.get(ip.image_id.as_str()) else {
            return Err(HoiError::Evaluation(format!(
                "predictions for unknown image {}",
                ip.image_id
            )));
        };
        if !seen.insert(img) {
            return Err(HoiError::Evaluation(format!(
                "image {} appears twice in predictions",
                ip.image_id
            )));
        }
        for (pi, pair) in ip.pairs.iter().enumerate() {
            let ctx = format!("{}.pairs[{pi}]", ip.image_id);
            if pair.scores.len() != num_classes {
                return Err(HoiError::format(
                    ctx,
                    format!("{} scores for {num_classes} classes", pair.scores.len()),
                ));
            }
            let human = parse_box(pair.human_box, &ctx)?;
            let object = parse_object(pair.object_box, &ctx)?;
            for (k, &score) in pair.scores.iter().enumerate() {
                if !score.is_finite() {
                    return Err(HoiError::format(ctx, "non-finite score"));
                }
                candidates[k].push(Candidate {
                    image: img,
                    image_id: ip.image_id.clone(),
                    pair: pi,
                    human,
                    object,
                    score,
                });
            }
        }
    }
    let mut labels: Vec<Vec<GroundTruth>> = vec![Vec::new(); num_classes];
    for (img, scene) in gt.iter().enumerate() {
        let mut unique = BTreeMap::new();
        for it in &scene.interactions {
            if it.class >= num_classes {
                return Err(HoiError::Evaluation(format!(
                    "image {} has class {} outside 0..{num_classes}",
                    scene.image_id, it.class
                )));
            }
            unique.insert((it.human, it.object, it.class), ());
        }
        for &(h, o, class) in unique.keys() {
            labels[class].push(GroundTruth {
                image: img,
                human: scene.humans[h].bbox,
                object: o.map(|o| scene.objects[o].bbox),
            });
        }
    }

    let table = class_object_table(gt, num_classes);
    let mut classes = Vec::with_capacity(num_classes);
    for k in 0..num_classes {
        let in_pool = |img: usize| match policy.setting {
            Setting::Default => true,
            Setting::Known => {
                table[k].is_empty() || gt[img].objects.iter().any(|o| table[k].contains(&o.category))
            }
        };
        let mut cands: Vec<Candidate> = candidates[k].iter().filter(|c| in_pool(c.image)).cloned().collect();
        cands.sort_by(rank_order);
        let gts: Vec<GroundTruth> = labels[k].iter().filter(|g| in_pool(g.image)).cloned().collect();
        let matches = match_predictions(&cands, &gts, policy)?;
        let ap = average_precision(&matches, gts.len())?;
        classes.push(ClassAp {
            class_id: k,
            ap,
            num_gt: gts.len(),
            num_predictions: cands.len(),
            rare: train_counts.map(|c| c.get(k).copied().unwrap_or(0) < policy.rare_threshold),
        });
    }
    let mean = |f: &dyn Fn(&ClassAp) -> bool| -> Option<f64> {
        let v: Vec<f64> = classes.iter().filter(|c| c.num_gt > 0 && f(c)).map(|c| c.ap).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let map = mean(&|_| true).unwrap_or(0.0);
    let (map_rare, map_non_rare) = if train_counts.is_some() {
        (mean(&|c| c.rare == Some(true)), mean(&|c| c.rare == Some(false)))
    } else {
        (None, None)
    };
    Ok(Report {
        scenario: policy.scenario,
        setting: policy.setting,
        iou_threshold: policy.iou_threshold,
        map,
        map_rare,
        map_non_rare,
        excluded_classes: classes.iter().filter(|c| c.num_gt == 0).count(),
        classes,
    })
}

/// Ground truth written as predictions with score 1 for its own class and
/// 0 elsewhere; human-only labels get a `null` object.
pub fn ground_truth_as_predictions(gt: &[SceneAnnotation], num_classes: usize) -> Vec<ImagePredictions> {
    gt.iter()
        .map(|s| {
            let mut pairs: BTreeMap<(usize, Option<usize>), Vec<f64>> = BTreeMap::new();
            for it in &s.interactions {
                pairs
                    .entry((it.human, it.object))
                    .or_insert_with(|| vec![0.0; num_classes])[it.class] = 1.0;
            }
            ImagePredictions {
                image_id: s.image_id.clone(),
                pairs: pairs
                    .into_iter()
                    .map(|((h, o), scores)| PairPrediction {
                        human_box: s.humans[h].bbox.to_array(),
                        object_box: o.map(|o| s.objects[o].bbox.to_array()),
                        scores,
                    })
                    .collect(),
            }
        })
        .collect()
}
