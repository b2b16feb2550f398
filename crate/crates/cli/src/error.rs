use std::path::PathBuf;

use hoi_core::HoiError;
use serde_json::json;

#[derive(Debug)]
pub enum CliError {
    /// A bad config key or value; `field` is its dotted path.
    Config { field: String, message: String },
    Io { path: PathBuf, message: String },
    Usage(String),
    Core(HoiError),
    /// Gradient check above tolerance.
    Check { worst: String, error: f64 },
}

impl From<HoiError> for CliError {
    fn from(e: HoiError) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config { field, message } => write!(f, "config {field}: {message}"),
            CliError::Io { path, message } => write!(f, "{}: {message}", path.display()),
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Check { worst, error } => write!(f, "gradient check failed: {worst} at {error:e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "config",
            CliError::Io { .. } => "io",
            CliError::Usage(_) => "usage",
            CliError::Core(_) => "runtime",
            CliError::Check { .. } => "gradcheck",
        }
    }

    /// The single machine-readable line printed on failure.
    pub fn to_json_line(&self) -> String {
        let mut v = json!({ "error": self.kind(), "message": self.to_string() });
        match self {
            CliError::Config { field, message } => {
                v["field"] = json!(field);
                v["message"] = json!(message);
            }
            CliError::Io { path, .. } => v["path"] = json!(path),
            _ => {}
        }
        v.to_string()
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}
