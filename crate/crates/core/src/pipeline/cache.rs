use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Incremental content hash; every field is labelled and length-prefixed.
pub struct ContentHash(Sha256);

impl ContentHash {
    pub fn new(domain: &str) -> Self {
        let mut h = ContentHash(Sha256::new());
        h.bytes("domain", domain.as_bytes());
        h
    }

    pub fn bytes(&mut self, label: &str, bytes: &[u8]) -> &mut Self {
        for part in [label.as_bytes(), bytes] {
            self.0.update((part.len() as u64).to_le_bytes());
            self.0.update(part);
        }
        self
    }

    pub fn json<T: Serialize>(&mut self, label: &str, value: &T) -> Result<&mut Self> {
        let text = serde_json::to_vec(value)?;
        Ok(self.bytes(label, &text))
    }

    pub fn finish(&self) -> String {
        hex::encode(self.0.clone().finalize().as_slice())
    }
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes).as_slice()))
}

/// What a finished stage leaves in `cache/<stage>.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub hash: String,
    /// Paths relative to the output directory.
    pub artifacts: Vec<PathBuf>,
}

impl StageRecord {
    pub fn path(output_dir: &Path, stage: &str) -> PathBuf {
        output_dir.join("cache").join(format!("{stage}.json"))
    }

    pub fn read(output_dir: &Path, stage: &str) -> Option<StageRecord> {
        let text = std::fs::read_to_string(Self::path(output_dir, stage)).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn write(&self, output_dir: &Path, stage: &str) -> Result<()> {
        let path = Self::path(output_dir, stage);
        write_file(&path, (serde_json::to_string_pretty(self)? + "\n").as_bytes())
    }

    /// Valid when the hash matches and every artifact is still on disk.
    pub fn is_fresh(&self, output_dir: &Path, expected_hash: &str) -> bool {
        self.hash == expected_hash && self.artifacts.iter().all(|a| output_dir.join(a).is_file())
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
