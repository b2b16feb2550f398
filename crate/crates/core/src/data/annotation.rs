//! Boxes, detections, per-image annotations and the annotation JSON file.
//!
//! File layout (UTF-8 JSON):
//!
//! ```text
//! {"images": [{"id": "...", "height": 64, "width": 64,
//!              "detections": [{"box": [x1, y1, x2, y2], "category": 0, "confidence": 0.9}, ...],
//!              "interactions": [[h_idx, o_idx | null, class_id], ...]}]}
//! ```
//!
//! Category 0 is the human category. Interaction indices point into the
//! image's `detections` array; on save humans are written first, then objects.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HoiError, Result};

pub const HUMAN_CATEGORY: u32 = 0;

/// Axis-aligned box in pixels, half-open `[x1, x2) × [y1, y2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = BBox { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    pub fn from_array(a: [f64; 4]) -> Result<Self> {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.x1, self.y1, self.x2, self.y2]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0)
            && self.x1 < self.x2
            && self.y1 < self.y2;
        if ok {
            Ok(())
        } else {
            Err(HoiError::InvalidBox(self.x1, self.y1, self.x2, self.y2))
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Smallest box containing both.
    pub fn union(&self, other: &BBox) -> BBox {
        BBox {
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
            x2: self.x2.max(other.x2),
            y2: self.y2.max(other.y2),
        }
    }

    /// Same box with the shorter side grown symmetrically to a square.
    /// May extend past the image; coordinates are not clamped.
    pub fn expand_to_square(&self) -> BBox {
        let (cx, cy) = self.center();
        let half = self.width().max(self.height()) / 2.0;
        BBox {
            x1: cx - half,
            y1: cy - half,
            x2: cx + half,
            y2: cy + half,
        }
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }

    pub fn scale(&self, factor: f64) -> BBox {
        BBox {
            x1: self.x1 * factor,
            y1: self.y1 * factor,
            x2: self.x2 * factor,
            y2: self.y2 * factor,
        }
    }

    /// Clamps to `[0, width] × [0, height]`; the result may be empty.
    pub fn clip(&self, width: f64, height: f64) -> BBox {
        BBox {
            x1: self.x1.clamp(0.0, width),
            y1: self.y1.clamp(0.0, height),
            x2: self.x2.clamp(0.0, width),
            y2: self.y2.clamp(0.0, height),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    /// 0 is reserved for humans.
    pub category: u32,
    pub confidence: f64,
}

/// A labeled interaction. `human` indexes `SceneAnnotation::humans`,
/// `object` indexes `SceneAnnotation::objects` (`None` for human-only).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Interaction {
    pub human: usize,
    pub object: Option<usize>,
    pub class: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneAnnotation {
    pub image_id: String,
    pub height: usize,
    pub width: usize,
    pub humans: Vec<Detection>,
    pub objects: Vec<Detection>,
    pub interactions: Vec<Interaction>,
}

impl SceneAnnotation {
    pub fn validate(&self) -> Result<()> {
        let ctx = |what: String| format!("image {}: {what}", self.image_id);
        if self.humans.is_empty() {
            return Err(HoiError::format(ctx("humans".into()), "at least one human required"));
        }
        for (i, d) in self.humans.iter().chain(&self.objects).enumerate() {
            d.bbox
                .validate()
                .map_err(|e| HoiError::format(ctx(format!("detection {i}")), e.to_string()))?;
            if !(0.0..=1.0).contains(&d.confidence) {
                return Err(HoiError::format(
                    ctx(format!("detection {i}")),
                    format!("confidence {} outside [0, 1]", d.confidence),
                ));
            }
        }
        if self.humans.iter().any(|d| d.category != HUMAN_CATEGORY)
            || self.objects.iter().any(|d| d.category == HUMAN_CATEGORY)
        {
            return Err(HoiError::format(ctx("detections".into()), "category/role mismatch"));
        }
        for (i, it) in self.interactions.iter().enumerate() {
            if it.human >= self.humans.len() || it.object.is_some_and(|o| o >= self.objects.len())
            {
                return Err(HoiError::format(
                    ctx(format!("interaction {i}")),
                    "index out of range",
                ));
            }
        }
        Ok(())
    }

    /// Object categories present in the image.
    pub fn object_categories(&self) -> Vec<u32> {
        let mut c: Vec<u32> = self.objects.iter().map(|d| d.category).collect();
        c.sort_unstable();
        c.dedup();
        c
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    images: Vec<RawImage>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawImage {
    id: String,
    height: usize,
    width: usize,
    detections: Vec<RawDetection>,
    interactions: Vec<(usize, Option<usize>, usize)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDetection {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    category: u32,
    confidence: f64,
}

/// Serializes scenes to the annotation JSON text.
pub fn annotations_to_json(scenes: &[SceneAnnotation]) -> String {
    let images = scenes
        .iter()
        .map(|s| {
            let detections = s
                .humans
                .iter()
                .chain(&s.objects)
                .map(|d| RawDetection {
                    bbox: d.bbox.to_array(),
                    category: d.category,
                    confidence: d.confidence,
                })
                .collect();
            let nh = s.humans.len();
            let interactions = s
                .interactions
                .iter()
                .map(|it| (it.human, it.object.map(|o| o + nh), it.class))
                .collect();
            RawImage {
                id: s.image_id.clone(),
                height: s.height,
                width: s.width,
                detections,
                interactions,
            }
        })
        .collect();
    serde_json::to_string_pretty(&RawFile { images }).expect("plain data serializes")
}

/// Parses annotation JSON text. `origin` names the source in error messages.
pub fn annotations_from_json(text: &str, origin: &Path) -> Result<Vec<SceneAnnotation>> {
    let raw: RawFile = serde_json::from_str(text).map_err(|source| HoiError::Json {
        path: origin.to_path_buf(),
        source,
    })?;
    raw.images
        .into_iter()
        .enumerate()
        .map(|(i, img)| convert_image(i, img))
        .collect()
}

fn convert_image(i: usize, img: RawImage) -> Result<SceneAnnotation> {
    let mut humans = Vec::new();
    let mut objects = Vec::new();
    // position in `detections` -> (is_human, index within its list)
    let mut slots = Vec::with_capacity(img.detections.len());
    for (j, d) in img.detections.iter().enumerate() {
        let ctx = format!("images[{i}].detections[{j}]");
        let bbox = BBox::from_array(d.bbox)
            .map_err(|_| HoiError::format(format!("{ctx}.box"), format!("invalid box {:?}", d.bbox)))?;
        if !(0.0..=1.0).contains(&d.confidence) || !d.confidence.is_finite() {
            return Err(HoiError::format(
                format!("{ctx}.confidence"),
                format!("confidence {} outside [0, 1]", d.confidence),
            ));
        }
        let det = Detection {
            bbox,
            category: d.category,
            confidence: d.confidence,
        };
        if d.category == HUMAN_CATEGORY {
            slots.push((true, humans.len()));
            humans.push(det);
        } else {
            slots.push((false, objects.len()));
            objects.push(det);
        }
    }
    let mut interactions = Vec::with_capacity(img.interactions.len());
    for (k, &(h, o, class)) in img.interactions.iter().enumerate() {
        let ctx = format!("images[{i}].interactions[{k}]");
        let human = match slots.get(h) {
            Some(&(true, idx)) => idx,
            _ => {
                return Err(HoiError::format(
                    ctx,
                    format!("detection {h} is not a human"),
                ))
            }
        };
        let object = match o {
            None => None,
            Some(o) => match slots.get(o) {
                Some(&(false, idx)) => Some(idx),
                _ => {
                    return Err(HoiError::format(
                        ctx,
                        format!("detection {o} is not an object"),
                    ))
                }
            },
        };
        interactions.push(Interaction {
            human,
            object,
            class,
        });
    }
    if humans.is_empty() {
        return Err(HoiError::format(
            format!("images[{i}].detections"),
            "at least one human required",
        ));
    }
    Ok(SceneAnnotation {
        image_id: img.id,
        height: img.height,
        width: img.width,
        humans,
        objects,
        interactions,
    })
}

pub fn save_annotations(scenes: &[SceneAnnotation], path: &Path) -> Result<()> {
    fs::write(path, annotations_to_json(scenes)).map_err(|e| HoiError::io(path, e))
}

pub fn load_annotations(path: &Path) -> Result<Vec<SceneAnnotation>> {
    let text = fs::read_to_string(path).map_err(|e| HoiError::io(path, e))?;
    annotations_from_json(&text, path)
}
