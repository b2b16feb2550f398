//! Guided pairwise-attention human-object interaction detection at desk
//! scale: data model and synthetic scenes, the model, training, inference
//! and evaluation.

pub mod attention;
pub mod backbone;
pub mod check;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod guidance;
pub mod head;
pub mod infer;
pub mod layers;
pub mod model;
pub mod params;
pub mod train;

pub use error::{HoiError, Result};
