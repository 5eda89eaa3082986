//! The run manifest: a JSON record of what a run produced, with the
//! config hash and seeds needed to reproduce it byte for byte.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_version: u32,
    pub config_hash: String,
    pub root_seed: u64,
    /// Seconds since the epoch at creation; fixed by `SELKALMAN_EPOCH`
    /// when byte-identical reruns are required.
    pub created_epoch: u64,
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub horizons: Vec<usize>,
    pub truth_initial: String,
    pub observations: String,
    pub truth_fields: Vec<HorizonFile>,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonFile {
    pub horizon: usize,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub model: String,
    pub horizon: usize,
    pub chain_seed: u64,
    pub rmse: f64,
    pub files: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::io(path.display().to_string(), e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let mut sorted = self.clone();
        sorted
            .entries
            .sort_by(|a, b| (a.model.as_str(), a.horizon).cmp(&(b.model.as_str(), b.horizon)));
        sorted.truth_fields.sort_by_key(|h| h.horizon);
        let text = serde_json::to_string_pretty(&sorted).expect("manifest serializes");
        std::fs::write(&path, text.as_bytes())
            .map_err(|e| CliError::io(path.display().to_string(), e))
    }

    /// Insert or replace the entry for `(model, horizon)`.
    pub fn upsert_entry(&mut self, entry: ManifestEntry) {
        self.entries
            .retain(|e| !(e.model == entry.model && e.horizon == entry.horizon));
        self.entries.push(entry);
    }

    pub fn entry(&self, model: &str, horizon: usize) -> Option<&ManifestEntry> {
        self.entries
            .iter()
            .find(|e| e.model == model && e.horizon == horizon)
    }

    /// Check that every listed file exists under `dir`.
    pub fn verify_files(&self, dir: &Path) -> Result<()> {
        let mut paths: Vec<&str> = vec![&self.truth_initial, &self.observations];
        paths.extend(self.truth_fields.iter().map(|h| h.path.as_str()));
        for e in &self.entries {
            paths.extend(e.files.values().map(|s| s.as_str()));
        }
        for rel in paths {
            let p = dir.join(rel);
            if !p.exists() {
                return Err(CliError::config(format!(
                    "manifest lists missing file {}",
                    p.display()
                )));
            }
        }
        Ok(())
    }
}
