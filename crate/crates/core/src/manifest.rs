//! Run directories and manifests: every command writes its artifacts under
//! `runs/<run_id>/` and records a manifest with a hashed file inventory so
//! outputs can be verified and reproduced.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Standard layout of one run directory:
/// `<root>/{manifest.json, config, checkpoints/, csv/, reports/}`.
#[derive(Debug, Clone)]
pub struct RunDirs {
    pub root: PathBuf,
}

impl RunDirs {
    /// Create `<out>/<run_id>` and its subdirectories.
    pub fn create(out: &Path, run_id: &str) -> Result<Self> {
        let root = out.join(run_id);
        for sub in ["checkpoints", "csv", "reports"] {
            std::fs::create_dir_all(root.join(sub))?;
        }
        Ok(Self { root })
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn csv(&self) -> PathBuf {
        self.root.join("csv")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Path relative to the run root.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub run_id: String,
    /// The subcommand that produced this run.
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    /// Full resolved configuration echo.
    pub config: serde_json::Value,
    pub wallclock_ms: u64,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    pub fn new(run_id: &str, command: &str, seed: u64, config: serde_json::Value) -> Self {
        Self {
            format_version: MANIFEST_FORMAT_VERSION,
            run_id: run_id.to_string(),
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            wallclock_ms: 0,
            files: Vec::new(),
        }
    }

    /// Hash an already-written file (path relative to the run root) into
    /// the inventory.
    pub fn record_file(&mut self, root: &Path, rel: &str) -> Result<()> {
        let bytes = std::fs::read(root.join(rel))?;
        self.files.push(FileEntry {
            path: rel.to_string(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    /// Write `manifest.json` at the run root (the manifest itself is not
    /// part of its own inventory). Entries are sorted by path first so the
    /// manifest is independent of recording order.
    pub fn write(&mut self, root: &Path) -> Result<()> {
        self.files.sort_by(|a, b| a.path.cmp(&b.path));
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(root.join("manifest.json"), json)?;
        Ok(())
    }

    pub fn load(root: &Path) -> Result<Self> {
        let json = std::fs::read_to_string(root.join("manifest.json"))?;
        let m: RunManifest = serde_json::from_str(&json)?;
        if m.format_version != MANIFEST_FORMAT_VERSION {
            return Err(Error::VersionMismatch(format!(
                "manifest format {} (expected {MANIFEST_FORMAT_VERSION})",
                m.format_version
            )));
        }
        Ok(m)
    }

    /// Re-hash every inventoried file and report mismatches.
    pub fn verify(&self, root: &Path) -> Result<()> {
        for entry in &self.files {
            let bytes = std::fs::read(root.join(&entry.path))?;
            let hash = sha256_hex(&bytes);
            if hash != entry.sha256 {
                return Err(Error::VersionMismatch(format!(
                    "hash mismatch for {}: manifest {} vs file {}",
                    entry.path, entry.sha256, hash
                )));
            }
        }
        Ok(())
    }
}
