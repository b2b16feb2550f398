//! Annotations, synthetic scenes, augmentation and on-disk datasets.
//!
//! A dataset directory holds `annotations.json` and one image blob per scene
//! at `images/<image_id>.bin`.

pub mod annotation;
pub mod augment;
pub mod image;
pub mod synthetic;

use std::fs;
use std::path::Path;

pub use annotation::{
    annotations_from_json, annotations_to_json, load_annotations, save_annotations, BBox, Detection, Interaction, SceneAnnotation,
    HUMAN_CATEGORY,
};
pub use synthetic::{generate_synthetic_dataset, Bucket, RelationRule, Sample, SyntheticSpec};

use crate::error::{HoiError, Result};

pub const ANNOTATIONS_FILE: &str = "annotations.json";
pub const IMAGES_DIR: &str = "images";

pub fn save_dataset(samples: &[Sample], dir: &Path) -> Result<()> {
    let images = dir.join(IMAGES_DIR);
    fs::create_dir_all(&images).map_err(|e| HoiError::io(&images, e))?;
    let scenes: Vec<SceneAnnotation> = samples.iter().map(|s| s.scene.clone()).collect();
    save_annotations(&scenes, &dir.join(ANNOTATIONS_FILE))?;
    for s in samples {
        image::save_image(&s.image, &images.join(format!("{}.bin", s.scene.image_id)))?;
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Vec<Sample>> {
    let scenes = load_annotations(&dir.join(ANNOTATIONS_FILE))?;
    scenes
        .into_iter()
        .map(|scene| {
            let path = dir.join(IMAGES_DIR).join(format!("{}.bin", scene.image_id));
            let image = image::load_image(&path)?;
            if image.shape()[1] != scene.height || image.shape()[2] != scene.width {
                return Err(HoiError::format(
                    path.display().to_string(),
                    format!(
                        "image is {:?} but annotation says {}x{}",
                        image.shape(),
                        scene.height,
                        scene.width
                    ),
                ));
            }
            Ok(Sample { scene, image })
        })
        .collect()
}
