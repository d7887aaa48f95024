//! Run manifests: everything that determines a command's output.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{DecodeError, Error, Result};
use crate::fsutil;

pub const TOOL: &str = "sspreid";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    /// Echo of the command's arguments.
    pub config: serde_json::Value,
    /// SHA-256 of each input, keyed by the path as given.
    pub inputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        Self {
            tool: TOOL.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            config,
            inputs: BTreeMap::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs
            .insert(path.display().to_string(), digest_path(path)?);
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serialises");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, DecodeError> {
        serde_json::from_str(text).map_err(|e| DecodeError::Content(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fsutil::read(path)?;
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::decode(path, DecodeError::Content("not UTF-8".into())))?;
        Self::from_json(&text).map_err(|e| Error::decode(path, e))
    }
}

/// Where a command writes the manifest for its main output.
pub fn path_for(output: &Path) -> std::path::PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

/// Hex SHA-256 of a file, or of a directory's sorted relative paths and
/// contents. Manifests are skipped so a directory digest ignores them.
pub fn digest_path(path: &Path) -> Result<String> {
    let meta = std::fs::metadata(path).map_err(|e| Error::io(path, e))?;
    if meta.is_file() {
        return Ok(hex::encode(Sha256::digest(fsutil::read(path)?)));
    }
    let mut h = Sha256::new();
    for entry in walkdir::WalkDir::new(path).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let p = e.path().unwrap_or(path).to_path_buf();
            Error::io(p, e.into())
        })?;
        let name = entry.file_name().to_string_lossy();
        if !entry.file_type().is_file() || name.ends_with("manifest.json") {
            continue;
        }
        let rel = entry.path().strip_prefix(path).unwrap_or(entry.path());
        let rel = rel.to_string_lossy().replace('\\', "/");
        h.update((rel.len() as u64).to_le_bytes());
        h.update(rel.as_bytes());
        let bytes = fsutil::read(entry.path())?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}
