//! Provenance record written next to every command's outputs: which command
//! ran, with which resolved settings, over which input bytes, for how long.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// Flag and config values as actually used, after defaults.
    pub config: BTreeMap<String, String>,
    /// Input path → SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    pub duration_ms: u64,
    #[serde(skip)]
    started: Instant,
}

impl RunManifest {
    pub fn start(command: &str) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: BTreeMap::new(),
            inputs: BTreeMap::new(),
            duration_ms: 0,
            started: Instant::now(),
        }
    }

    pub fn config(&mut self, key: &str, value: impl ToString) {
        self.config.insert(key.to_string(), value.to_string());
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)
            .with_context(|| format!("reading {} for its digest", path.display()))?;
        let digest = Sha256::digest(&bytes);
        self.inputs
            .insert(path.display().to_string(), format!("{digest:x}"));
        Ok(())
    }

    /// Stamp the elapsed time and hand back the serializable record.
    pub fn finish(mut self) -> serde_json::Value {
        self.duration_ms = self.started.elapsed().as_millis() as u64;
        serde_json::to_value(&self).expect("manifest serializes")
    }
}
