use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use hoi_core::check::{model_check, op_suite, CheckResult};
use hoi_core::data::{
    generate_synthetic_dataset, load_annotations, load_dataset, save_annotations, save_dataset, Interaction, Sample,
    SceneAnnotation,
};
use hoi_core::eval::{evaluate, load_predictions, save_predictions, Report};
use hoi_core::infer::{attention_dump, predict_all};
use hoi_core::model::Model;
use hoi_core::params::ParamStore;
use hoi_core::train::train;

use crate::config::{RunConfig, Split};
use crate::error::CliError;

pub const CHECKPOINT: &str = "checkpoint.bin";
pub const BEST: &str = "best.bin";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const RESOLVED_CONFIG: &str = "config.toml";
pub const PREDICTIONS: &str = "predictions.json";
pub const ANNOTATIONS: &str = "annotations.json";
pub const ATTENTION_DIR: &str = "attention";
pub const REPORT: &str = "report.json";

/// Largest relative error `gradcheck` accepts.
pub const GRAD_TOLERANCE: f64 = 1e-4;

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io {
        path: path.into(),
        message: e.to_string(),
    }
}

fn require(path: &Path, key: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Config {
            field: key.into(),
            message: format!("{} does not exist", path.display()),
        })
    }
}

/// Scenes from `data.dataset`, or generated from `data.synthetic`.
pub fn load_samples(cfg: &RunConfig) -> Result<Vec<Sample>, CliError> {
    match &cfg.data.dataset {
        Some(dir) => {
            require(dir, "data.dataset")?;
            Ok(load_dataset(dir)?)
        }
        None => Ok(generate_synthetic_dataset(&cfg.data.synthetic)?),
    }
}

pub fn split(cfg: &RunConfig, samples: &[Sample], which: Split) -> Result<Vec<Sample>, CliError> {
    let n = cfg.data.train_scenes;
    if n > samples.len() {
        return Err(CliError::Config {
            field: "data.train_scenes".into(),
            message: format!("{n} exceeds the {} available scenes", samples.len()),
        });
    }
    Ok(match which {
        Split::Train => samples[..n].to_vec(),
        Split::Test => samples[n..].to_vec(),
        Split::All => samples.to_vec(),
    })
}

pub fn load_model(cfg: &RunConfig, checkpoint: &Path) -> Result<Model, CliError> {
    require(checkpoint, "--checkpoint")?;
    let mut model = Model::new(cfg.model.clone())?;
    model.params.copy_from(&ParamStore::load(checkpoint)?)?;
    Ok(model)
}

fn save_atomic(params: &ParamStore, path: &Path) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    params.save(&tmp)?;
    fs::rename(&tmp, path).map_err(io(path))
}

/// Writes the synthetic dataset to `out`; returns the scene count.
pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<usize, CliError> {
    let samples = generate_synthetic_dataset(&cfg.data.synthetic)?;
    save_dataset(&samples, out)?;
    Ok(samples.len())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub epochs: usize,
    pub final_loss: f64,
    pub best_loss: f64,
}

/// Trains on the train split, writing into `out` the resolved config, a
/// checkpoint per epoch, the best-loss checkpoint and the epoch log.
/// `init` warm-starts from an existing checkpoint.
pub fn cmd_train(cfg: &RunConfig, init: Option<&Path>, out: &Path) -> Result<TrainSummary, CliError> {
    let samples = load_samples(cfg)?;
    let data = split(cfg, &samples, Split::Train)?;
    let mut model = match init {
        Some(p) => load_model(cfg, p)?,
        None => {
            let mut m = Model::new(cfg.model.clone())?;
            if let Some(path) = &cfg.data.embeddings {
                require(path, "data.embeddings")?;
                m.semantic.load_embeddings(&mut m.params, path)?;
            }
            m
        }
    };
    fs::create_dir_all(out).map_err(io(out))?;
    fs::write(out.join(RESOLVED_CONFIG), cfg.to_toml()).map_err(io(out))?;
    let log_path = out.join(TRAIN_LOG);
    let mut log = fs::File::create(&log_path).map_err(io(&log_path))?;
    writeln!(log, "epoch,loss,train_map").map_err(io(&log_path))?;
    let gt: Vec<SceneAnnotation> = data.iter().map(|s| s.scene.clone()).collect();
    let mut summary = TrainSummary {
        epochs: 0,
        final_loss: f64::NAN,
        best_loss: f64::INFINITY,
    };
    let mut failure = None;
    train(&mut model, &data, &cfg.train, &cfg.loss, |m, r| {
        let mut step = || -> Result<(), CliError> {
            let map = if cfg.log.train_map {
                let preds = predict_all(m, &data, &cfg.lis, &cfg.infer)?;
                format!("{:.6}", evaluate(&preds, &gt, cfg.model.num_classes, &cfg.eval, None)?.map)
            } else {
                String::new()
            };
            writeln!(log, "{},{:.9},{map}", r.epoch + 1, r.mean_loss).map_err(io(&log_path))?;
            save_atomic(&m.params, &out.join(CHECKPOINT))?;
            if r.mean_loss < summary.best_loss {
                summary.best_loss = r.mean_loss;
                save_atomic(&m.params, &out.join(BEST))?;
            }
            summary.epochs = r.epoch + 1;
            summary.final_loss = r.mean_loss;
            Ok(())
        };
        match step() {
            Ok(()) => Ok(true),
            Err(e) => {
                failure = Some(e);
                Ok(false)
            }
        }
    })?;
    match failure {
        Some(e) => Err(e),
        None => Ok(summary),
    }
}

fn file_stem(image_id: &str) -> String {
    image_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Scores `data.infer_split`, writing predictions and the split's
/// annotations (the matching evaluation ground truth) into `out`.
pub fn cmd_infer(cfg: &RunConfig, checkpoint: &Path, out: &Path, attention: bool) -> Result<usize, CliError> {
    let model = load_model(cfg, checkpoint)?;
    let samples = load_samples(cfg)?;
    let data = split(cfg, &samples, cfg.data.infer_split)?;
    let preds = predict_all(&model, &data, &cfg.lis, &cfg.infer)?;
    fs::create_dir_all(out).map_err(io(out))?;
    save_predictions(&preds, &out.join(PREDICTIONS))?;
    let gt: Vec<SceneAnnotation> = data.iter().map(|s| s.scene.clone()).collect();
    save_annotations(&gt, &out.join(ANNOTATIONS))?;
    if attention {
        let dir = out.join(ATTENTION_DIR);
        fs::create_dir_all(&dir).map_err(io(&dir))?;
        for s in &data {
            let path = dir.join(format!("{}.txt", file_stem(&s.scene.image_id)));
            fs::write(&path, attention_dump(&model, &s.image, &s.scene)?).map_err(io(&path))?;
        }
    }
    Ok(preds.len())
}

pub fn cmd_eval(cfg: &RunConfig, predictions: &Path, annotations: &Path) -> Result<Report, CliError> {
    require(predictions, "--predictions")?;
    require(annotations, "--annotations")?;
    let preds = load_predictions(predictions)?;
    let gt = load_annotations(annotations)?;
    Ok(evaluate(&preds, &gt, cfg.model.num_classes, &cfg.eval, None)?)
}

/// The first generated scene cut down to one human and one object, so two
/// candidate pairs.
pub fn two_pair_scene(cfg: &RunConfig) -> Result<Sample, CliError> {
    let mut spec = cfg.data.synthetic.clone();
    spec.scene_count = 1;
    let mut s = generate_synthetic_dataset(&spec)?.remove(0);
    let object = s.scene.interactions.iter().find_map(|i| i.object.filter(|_| i.human == 0)).unwrap_or(0);
    s.scene.humans.truncate(1);
    s.scene.objects = s.scene.objects.get(object).copied().into_iter().collect();
    s.scene.interactions = s
        .scene
        .interactions
        .iter()
        .filter(|i| i.human == 0 && (i.object.is_none() || i.object == Some(object)))
        .map(|i| Interaction {
            object: i.object.map(|_| 0),
            ..*i
        })
        .collect();
    Ok(s)
}

/// Every tape operation plus the end-to-end loss of a two-pair scene
/// against `coords` entries of each trainable parameter.
pub fn cmd_gradcheck(cfg: &RunConfig, seed: u64, coords: usize) -> Result<Vec<CheckResult>, CliError> {
    let mut out = op_suite(seed)?;
    let model = Model::new(cfg.model.clone())?;
    let s = two_pair_scene(cfg)?;
    for mut r in model_check(&model, &s.image, &s.scene, &cfg.loss, &cfg.train, coords)? {
        r.name = format!("loss/{}", r.name);
        out.push(r);
    }
    Ok(out)
}

#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn check_passed(results: &[CheckResult]) -> Result<(), CliError> {
    let worst = results
        .iter()
        .max_by(|a, b| a.max_relative_error.total_cmp(&b.max_relative_error));
    match worst {
        // NaN counts as a failure
        Some(w) if !(w.max_relative_error < GRAD_TOLERANCE) => Err(CliError::Check {
            worst: w.name.clone(),
            error: w.max_relative_error,
        }),
        _ => Ok(()),
    }
}

/// Paths produced by [`run_pipeline`].
#[derive(Clone, Debug)]
pub struct PipelineDirs {
    pub data: PathBuf,
    pub run: PathBuf,
    pub infer: PathBuf,
}

impl PipelineDirs {
    pub fn under(root: &Path) -> Self {
        PipelineDirs {
            data: root.join("data"),
            run: root.join("run"),
            infer: root.join("infer"),
        }
    }
}

/// generate → train → infer → eval under `root`; writes the report there
/// and returns it.
pub fn run_pipeline(cfg: &RunConfig, root: &Path) -> Result<Report, CliError> {
    let dirs = PipelineDirs::under(root);
    cmd_generate(cfg, &dirs.data)?;
    let mut cfg = cfg.clone();
    cfg.data.dataset = Some(dirs.data.clone());
    cmd_train(&cfg, None, &dirs.run)?;
    cmd_infer(&cfg, &dirs.run.join(CHECKPOINT), &dirs.infer, false)?;
    let report = cmd_eval(&cfg, &dirs.infer.join(PREDICTIONS), &dirs.infer.join(ANNOTATIONS))?;
    let path = root.join(REPORT);
    fs::write(&path, report.to_json()).map_err(io(&path))?;
    Ok(report)
}
