//! Reading inputs and writing outputs.

use std::fs;
use std::path::{Path, PathBuf};

use fusetile_core::config::{AcceleratorConfig, AcceleratorSpec, WorkloadGraph, WorkloadSpec};
use fusetile_core::optimizer::OptimizerConfig;
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("cannot read {path}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("malformed JSON in {path}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("invalid contents of {path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error("`{0}` is neither a preset ({presets}) nor a readable file", presets = AcceleratorConfig::preset_names().join(", "))]
    UnknownHardware(String),
    #[error("CSV output to {path}")]
    Csv { path: PathBuf, source: csv::Error },
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(|source| IoError::Read { path: path.to_path_buf(), source })?;
    serde_json::from_str(&text).map_err(|source| IoError::Json { path: path.to_path_buf(), source })
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).expect("output types serialize");
    text.push('\n');
    fs::write(path, text).map_err(|source| IoError::Write { path: path.to_path_buf(), source })
}

pub fn create_dir(path: &Path) -> Result<(), IoError> {
    fs::create_dir_all(path).map_err(|source| IoError::Write { path: path.to_path_buf(), source })
}

pub fn load_workload(path: &Path) -> Result<WorkloadGraph, IoError> {
    let spec: WorkloadSpec = read_json(path)?;
    WorkloadGraph::from_spec(spec).map_err(|e| IoError::Invalid { path: path.to_path_buf(), message: e.to_string() })
}

/// A preset name, or the path of an accelerator JSON file.
pub fn load_hardware(name_or_path: &str) -> Result<AcceleratorConfig, IoError> {
    if let Some(cfg) = AcceleratorConfig::preset(name_or_path) {
        return Ok(cfg);
    }
    let path = Path::new(name_or_path);
    if !path.is_file() {
        return Err(IoError::UnknownHardware(name_or_path.to_string()));
    }
    let spec: AcceleratorSpec = read_json(path)?;
    AcceleratorConfig::from_spec(spec).map_err(|e| IoError::Invalid { path: path.to_path_buf(), message: e.to_string() })
}

/// Defaults when `path` is `None`.
pub fn load_optimizer_config(path: Option<&Path>) -> Result<OptimizerConfig, IoError> {
    let Some(path) = path else {
        return Ok(OptimizerConfig::default());
    };
    let cfg: OptimizerConfig = read_json(path)?;
    cfg.validate().map_err(|e| IoError::Invalid { path: path.to_path_buf(), message: e.to_string() })?;
    Ok(cfg)
}

pub fn write_csv<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> Result<(), IoError> {
    let err = |source| IoError::Csv { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for row in rows {
        w.serialize(row).map_err(err)?;
    }
    w.flush().map_err(|source| IoError::Write { path: path.to_path_buf(), source })
}
