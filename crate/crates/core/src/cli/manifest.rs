use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CliError;

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const FAILURE_MARKER: &str = "FAILED.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub sha256: String,
}

/// What produced the artifacts in an output directory. No timestamps, so
/// re-running the same config reproduces the manifest byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub data_fingerprint: String,
    pub seed: u64,
    /// The effective configuration, after command-line overrides.
    pub config: String,
    pub artifacts: Vec<ArtifactEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes files under one directory, recording each in the manifest.
pub struct ArtifactWriter {
    dir: PathBuf,
    entries: Vec<ArtifactEntry>,
}

impl ArtifactWriter {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)?;
        Ok(ArtifactWriter { dir: dir.to_path_buf(), entries: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// `rel` is a relative path with `/` separators.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.path(rel)?;
        std::fs::write(&path, bytes)?;
        self.record(rel, bytes);
        Ok(())
    }

    /// Resolves `rel` inside the directory, creating parents; for files
    /// written by other code and then passed to [`ArtifactWriter::register`].
    pub fn path(&self, rel: &str) -> Result<PathBuf, CliError> {
        if rel.split('/').any(|c| c == ".." || c.is_empty()) || Path::new(rel).is_absolute() {
            return Err(CliError::Parse(format!("artifact path `{rel}` escapes the output directory")));
        }
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        Ok(path)
    }

    pub fn register(&mut self, rel: &str) -> Result<(), CliError> {
        let bytes = std::fs::read(self.dir.join(rel))?;
        self.record(rel, &bytes);
        Ok(())
    }

    fn record(&mut self, rel: &str, bytes: &[u8]) {
        self.entries.retain(|e| e.path != rel);
        self.entries.push(ArtifactEntry { path: rel.to_string(), sha256: sha256_hex(bytes) });
    }

    pub fn finish(mut self, command: &str, config: &str, data_fingerprint: &str, seed: u64) -> Result<Manifest, CliError> {
        self.entries.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: sha256_hex(config.as_bytes()),
            data_fingerprint: data_fingerprint.to_string(),
            seed,
            config: config.to_string(),
            artifacts: self.entries,
        };
        let text = toml::to_string(&manifest).expect("manifest serializes");
        std::fs::write(self.dir.join(MANIFEST_FILE), text)?;
        Ok(manifest)
    }
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, CliError> {
    let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
    toml::from_str(&text).map_err(|e| CliError::Parse(format!("manifest: {e}")))
}
