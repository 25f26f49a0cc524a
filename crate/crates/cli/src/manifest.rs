//! `manifest.json`, written once per output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{write_err, CliError};

pub const FILE_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub backend: String,
    pub root_seed: u64,
    pub seed_policy: String,
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: Vec<String>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

pub fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str, config_hash: String, backend: &str, root_seed: u64) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash,
            backend: backend.to_string(),
            root_seed,
            seed_policy: "every stochastic draw is derived from root_seed by sha256 over the call's role keys".into(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            started_unix_ms: now_ms(),
            finished_unix_ms: 0,
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) -> &mut Self {
        self.inputs.insert(name.to_string(), path.to_path_buf());
        self
    }

    pub fn output(&mut self, name: &str) -> &mut Self {
        self.outputs.push(name.to_string());
        self
    }

    pub fn write(mut self, dir: &Path) -> Result<(), CliError> {
        self.finished_unix_ms = now_ms();
        let path = dir.join(FILE_NAME);
        let text = serde_json::to_string_pretty(&self).expect("manifest serialises");
        std::fs::write(&path, text + "\n").map_err(write_err(&path))
    }
}
