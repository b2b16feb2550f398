//! Config-driven runs: dataset generation, training, inference, evaluation
//! and gradient checking.

pub mod commands;
pub mod config;
pub mod error;

pub use config::RunConfig;
pub use error::CliError;

/// Caps the global rayon pool at `HOI_THREADS` when set.
pub fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("HOI_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("HOI_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}
