//! Run configuration: one TOML file with a section per stage.

use std::path::{Path, PathBuf};

use hoi_core::config::{InferenceConfig, LisConfig, LossConfig, ModelConfig};
use hoi_core::data::SyntheticSpec;
use hoi_core::eval::MatchPolicy;
use hoi_core::train::TrainConfig;
use hoi_core::HoiError;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Dataset directory. When unset, scenes come from `synthetic`.
    pub dataset: Option<PathBuf>,
    pub synthetic: SyntheticSpec,
    /// The first `train_scenes` scenes train; the rest are held out.
    pub train_scenes: usize,
    /// Scenes scored by `infer`.
    pub infer_split: Split,
    /// Word-embedding file loaded into a freshly built model before training.
    pub embeddings: Option<PathBuf>,
    /// Defaults for `eval` when the flags are absent.
    pub predictions: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dataset: None,
            synthetic: SyntheticSpec::default(),
            train_scenes: 150,
            infer_split: Split::Test,
            embeddings: None,
            predictions: None,
            annotations: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogConfig {
    /// Adds train-split mAP to every line of the training log.
    pub train_map: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub lis: LisConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub eval: MatchPolicy,
    pub infer: InferenceConfig,
    pub log: LogConfig,
}

fn field(name: &str, e: HoiError) -> CliError {
    let message = match e {
        HoiError::Config(m) | HoiError::Spec(m) => m,
        other => other.to_string(),
    };
    CliError::Config {
        field: name.into(),
        message,
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let syntax = |e: toml::de::Error| CliError::Config {
            field: e.span().map(|s| format!("line {}", line_of(text, s.start))).unwrap_or_default(),
            message: e.message().to_string(),
        };
        let de = toml::Deserializer::parse(text).map_err(syntax)?;
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let mut message = inner.message().to_string();
            if let Some(s) = inner.span() {
                message = format!("{message} (line {})", line_of(text, s.start));
            }
            CliError::Config { field: path, message }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.into(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Value checks with the offending key in every diagnostic. Path
    /// existence is checked by the commands that read them.
    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate().map_err(|e| field("model", e))?;
        self.loss.validate().map_err(|e| field("loss", e))?;
        self.lis.validate().map_err(|e| field("lis", e))?;
        self.train.validate().map_err(|e| field("train", e))?;
        self.eval.validate().map_err(|e| field("eval", e))?;
        for (name, v) in [
            ("infer.human_threshold", self.infer.human_threshold),
            ("infer.object_threshold", self.infer.object_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(CliError::Config {
                    field: name.into(),
                    message: format!("{v} outside [0, 1]"),
                });
            }
        }
        if self.data.dataset.is_none() {
            let spec = &self.data.synthetic;
            spec.validate().map_err(|e| field("data.synthetic", e))?;
            if spec.num_classes != self.model.num_classes {
                return Err(CliError::Config {
                    field: "model.num_classes".into(),
                    message: format!("{} differs from data.synthetic.num_classes {}", self.model.num_classes, spec.num_classes),
                });
            }
            if spec.num_object_categories != self.model.num_categories {
                return Err(CliError::Config {
                    field: "model.num_categories".into(),
                    message: format!(
                        "{} differs from data.synthetic.num_object_categories {}",
                        self.model.num_categories, spec.num_object_categories
                    ),
                });
            }
        }
        Ok(())
    }
}
