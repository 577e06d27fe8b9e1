use std::path::{Path, PathBuf};

use elasto_core::{FemError, InverseError, MeshError, MetricError, SynthError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("could not parse configuration: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Inverse(#[from] InverseError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("png: {0}")]
    Png(#[from] png::EncodingError),
    #[error("raster: {0}")]
    Raster(String),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Stable machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Io { .. } => "io",
            CliError::Config(_) | CliError::Toml(_) => "config",
            CliError::Mesh(_) => "mesh",
            CliError::Fem(_) => "fem",
            CliError::Synth(_) => "synth",
            CliError::Inverse(_) => "inverse",
            CliError::Metric(_) => "metric",
            CliError::Csv(_) => "csv",
            CliError::Json(_) => "json",
            CliError::Png(_) => "png",
            CliError::Raster(_) => "raster",
            CliError::Usage(_) => "usage",
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({ "status": "error", "kind": self.kind(), "message": self.to_string() })
    }
}
