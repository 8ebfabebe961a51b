//! Run manifest: what ran, from which config, producing which files.
//! Written atomically as the last act of every run, success or failure.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use hawkes_ident::io;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub seconds: f64,
    /// Paths relative to the output directory, in deterministic order.
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_sha256: String,
    pub stages: Vec<StageRecord>,
    /// First failure, if the run aborted; exit code 1 accompanies it.
    pub error: Option<String>,
}

impl RunManifest {
    pub fn new(command: &str, config_sha256: String) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_sha256,
            stages: Vec::new(),
            error: None,
        }
    }

    pub fn push_stage(&mut self, name: &str, started: Instant, artifacts: Vec<String>) {
        self.stages.push(StageRecord {
            name: name.to_string(),
            seconds: started.elapsed().as_secs_f64(),
            artifacts,
        });
    }

    pub fn write(&self, out_dir: &Path) -> Result<(), io::IoError> {
        io::write_json(&out_dir.join("manifest.json"), self)
    }
}
