use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hoi_cli::commands::{self, ANNOTATIONS, PREDICTIONS};
use hoi_cli::{init_threads, CliError, RunConfig};
use serde_json::json;

#[derive(Parser)]
#[command(name = "hoi", version, about = "Guided-attention human-object interaction detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the seed the command consumes.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic dataset (default out: data.dataset or ./data).
    Generate(Common),
    /// Train; --checkpoint warm-starts (default out: ./run).
    Train(Common),
    /// Score a split with --checkpoint (default out: ./infer).
    Infer {
        #[command(flatten)]
        common: Common,
        /// Also write per-scene attention maps.
        #[arg(long)]
        attention: bool,
    },
    /// Evaluate a prediction dump; --out also writes the report.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// Print an aligned table instead of JSON.
        #[arg(long)]
        table: bool,
    },
    /// Finite-difference check of every operation and the training loss.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Entries probed per parameter tensor.
        #[arg(long, default_value_t = 3)]
        coords: usize,
    },
}

fn load(common: &Common) -> Result<RunConfig, CliError> {
    match &common.config {
        Some(p) => {
            if !p.exists() {
                return Err(CliError::Config {
                    field: "--config".into(),
                    message: format!("{} does not exist", p.display()),
                });
            }
            RunConfig::load(p)
        }
        None => Ok(RunConfig::default()),
    }
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    p.as_deref().ok_or_else(|| CliError::Usage(format!("{flag} is required")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::Generate(c) => {
            let mut cfg = load(&c)?;
            if let Some(s) = c.seed {
                cfg.data.synthetic.rng_seed = s;
            }
            let out = c.out.or(cfg.data.dataset.clone()).unwrap_or_else(|| "data".into());
            let n = commands::cmd_generate(&cfg, &out)?;
            println!("{}", json!({ "command": "generate", "scenes": n, "out": out }));
        }
        Command::Train(c) => {
            let mut cfg = load(&c)?;
            if let Some(s) = c.seed {
                cfg.train.seed = s;
                cfg.model.init_seed = s;
            }
            let out = c.out.unwrap_or_else(|| "run".into());
            let s = commands::cmd_train(&cfg, c.checkpoint.as_deref(), &out)?;
            println!(
                "{}",
                json!({ "command": "train", "epochs": s.epochs, "final_loss": s.final_loss, "best_loss": s.best_loss, "out": out })
            );
        }
        Command::Infer { common: c, attention } => {
            let cfg = load(&c)?;
            let out = c.out.clone().unwrap_or_else(|| "infer".into());
            let n = commands::cmd_infer(&cfg, required(&c.checkpoint, "--checkpoint")?, &out, attention)?;
            println!(
                "{}",
                json!({ "command": "infer", "scenes": n, "predictions": out.join(PREDICTIONS), "annotations": out.join(ANNOTATIONS) })
            );
        }
        Command::Eval { common: c, predictions, annotations, table } => {
            let cfg = load(&c)?;
            let preds = predictions.or(cfg.data.predictions.clone());
            let gt = annotations.or(cfg.data.annotations.clone());
            let report = commands::cmd_eval(&cfg, required(&preds, "--predictions")?, required(&gt, "--annotations")?)?;
            if let Some(out) = &c.out {
                std::fs::write(out, report.to_json()).map_err(|e| CliError::Io {
                    path: out.clone(),
                    message: e.to_string(),
                })?;
            }
            if table {
                print!("{}", report.to_table(&cfg.data.synthetic.class_names));
            } else {
                println!("{}", report.to_json());
            }
        }
        Command::Gradcheck { common: c, coords } => {
            let cfg = load(&c)?;
            let results = commands::cmd_gradcheck(&cfg, c.seed.unwrap_or(cfg.train.seed), coords)?;
            for r in &results {
                println!("{}", json!({ "op": r.name, "max_relative_error": r.max_relative_error }));
            }
            commands::check_passed(&results)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
