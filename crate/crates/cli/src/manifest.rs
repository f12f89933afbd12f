//! Run manifests: config hash, seed, command, tool version, timestamps, and
//! checksums of every emitted file.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Debug, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub command: String,
    pub tool_version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub pass: bool,
    pub files: Vec<FileEntry>,
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Collects emitted files for one run directory and finalizes the manifest.
pub struct ManifestBuilder {
    dir: PathBuf,
    manifest: RunManifest,
}

impl ManifestBuilder {
    pub fn new(dir: &Path, config_hash: String, seed: u64, command: &str) -> Self {
        Self {
            dir: dir.to_path_buf(),
            manifest: RunManifest {
                config_hash,
                seed,
                command: command.to_string(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                started_unix: now_unix(),
                finished_unix: 0,
                pass: false,
                files: Vec::new(),
            },
        }
    }

    /// Write a file into the run directory and record its checksum.
    pub fn write_file(&mut self, name: &str, contents: &[u8]) -> std::io::Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, contents)?;
        let mut hasher = Sha256::new();
        hasher.update(contents);
        let digest = hasher.finalize();
        self.manifest.files.push(FileEntry {
            path: name.to_string(),
            sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
            bytes: contents.len() as u64,
        });
        Ok(())
    }

    /// Finalize and write `manifest.json`.
    pub fn finish(mut self, pass: bool) -> std::io::Result<()> {
        self.manifest.finished_unix = now_unix();
        self.manifest.pass = pass;
        self.manifest.files.sort_by(|a, b| a.path.cmp(&b.path));
        let body = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        fs::write(self.dir.join("manifest.json"), body)
    }
}
