use std::io;
use std::path::PathBuf;

use serde_json::json;
use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] swei_core::Error),

    #[error("{file}: `{path}`: {message}")]
    Config {
        file: PathBuf,
        path: String,
        message: String,
    },

    #[error("{0}: {1}")]
    Io(PathBuf, io::Error),

    #[error("invalid range {lo}..{hi}: need finite lo < hi")]
    InvalidRange { lo: f64, hi: f64 },

    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Config { .. } => "ConfigError",
            CliError::Io(..) => "Io",
            CliError::InvalidRange { .. } => "InvalidRange",
            CliError::Usage(_) => "Usage",
        }
    }

    /// Machine-readable report for stderr.
    pub fn to_json(&self) -> serde_json::Value {
        let mut v = json!({ "error": self.kind(), "message": self.to_string() });
        if let CliError::Config { file, path, .. } = self {
            v["file"] = json!(file);
            v["field"] = json!(path);
        }
        v
    }
}

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |e| CliError::Io(path.to_path_buf(), e)
}
