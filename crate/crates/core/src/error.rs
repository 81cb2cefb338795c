use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("patch too small: side {side} < {min}")]
    PatchTooSmall { side: usize, min: usize },

    #[error("coordinate descent did not converge after {sweeps} sweeps (last max change {max_change:e})")]
    NoConvergence {
        sweeps: usize,
        max_change: f64,
        beta: Vec<f64>,
    },

    #[error("degenerate component: {0}")]
    Degenerate(String),

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("ingestion failed ({reason}) for {} path(s): {}", .paths.len(), display_paths(.paths))]
    Ingestion { paths: Vec<PathBuf>, reason: String },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("no evidence: {0}")]
    NoEvidence(String),

    #[error("bundle error: {0}")]
    Bundle(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn display_paths(paths: &[PathBuf]) -> String {
    paths
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
