//! Artifact manifests: every command that writes files also writes a
//! `manifest.json` listing each artifact with its SHA-256 content hash, so
//! determinism is checkable without golden files.

use std::path::Path;

use sha2::{Digest, Sha256};

use mcorr_core::{Error, Result};

pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new() -> Self {
        Manifest {
            entries: Vec::new(),
        }
    }

    /// Hashes `name` inside `dir` and records it.
    pub fn add(&mut self, dir: &Path, name: &str) -> Result<()> {
        let path = dir.join(name);
        let bytes = std::fs::read(&path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        let digest = Sha256::digest(&bytes);
        self.entries.push((name.to_string(), format!("{digest:x}")));
        Ok(())
    }

    /// Writes `manifest.json` into `dir`: artifacts sorted by name, pretty
    /// JSON, LF endings, trailing newline.
    pub fn write(mut self, dir: &Path) -> Result<()> {
        self.entries.sort();
        let artifacts: Vec<serde_json::Value> = self
            .entries
            .iter()
            .map(|(name, sha256)| serde_json::json!({ "name": name, "sha256": sha256 }))
            .collect();
        let doc = serde_json::json!({ "artifacts": artifacts });
        let mut text = serde_json::to_string_pretty(&doc).expect("manifest serializes");
        text.push('\n');
        let path = dir.join("manifest.json");
        std::fs::write(&path, text).map_err(|e| Error::Io {
            path,
            source: e,
        })
    }
}
