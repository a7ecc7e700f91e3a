//! Run manifests: the command, seed and configuration that produced a set
//! of files, with SHA-256 content hashes.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

pub const MANIFEST_FILE: &str = "manifest.json";
/// Bumped whenever rendered outputs change for identical inputs.
pub const RENDERER_VERSION: &str = "occfield-render-1";

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_bytes(&std::fs::read(path)?))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: String,
    pub renderer_version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    /// Relative path → hex SHA-256.
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            renderer_version: RENDERER_VERSION.to_string(),
            seed,
            config,
            files: BTreeMap::new(),
        }
    }

    /// Hashes `root/rel` and records it under `rel`.
    pub fn add_file(&mut self, root: &Path, rel: &str) -> Result<()> {
        let hash = sha256_file(&root.join(rel))?;
        self.files.insert(rel.to_string(), hash);
        Ok(())
    }

    /// Fails with the first recorded file whose content changed.
    pub fn verify(&self, root: &Path) -> Result<()> {
        for (rel, hash) in &self.files {
            let actual = sha256_file(&root.join(rel))?;
            if &actual != hash {
                return Err(Error::Format(format!("{rel}: hash {actual} does not match manifest {hash}")));
            }
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn save_as(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST_FILE))?)?)
    }
}
