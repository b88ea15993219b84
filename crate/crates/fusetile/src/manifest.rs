use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::io::{read_json, write_json, IoError};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything needed to repeat a command. Holds no timestamps or host
/// details, so identical runs write identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub workload: Option<String>,
    pub hw: String,
    pub optimizer_config: Option<String>,
    pub out: String,
    pub seed: u64,
    pub tool_version: String,
    /// Command-specific flags.
    #[serde(default)]
    pub options: serde_json::Map<String, serde_json::Value>,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<(), IoError> {
        write_json(&dir.join(MANIFEST_FILE), self)
    }

    pub fn read(dir: &Path) -> Result<Self, IoError> {
        read_json(&dir.join(MANIFEST_FILE))
    }
}
