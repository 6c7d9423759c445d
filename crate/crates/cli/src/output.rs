//! Output directory bookkeeping and the run manifest.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory, with `/` separators.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Everything needed to rerun a command: the parsed options, the global
/// flags and checksums of every file written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub jobs: usize,
    pub deterministic: bool,
    pub out: PathBuf,
    pub config: serde_json::Value,
    pub artifacts: Vec<Artifact>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub created_unix: Option<u64>,
}

pub struct Output {
    root: PathBuf,
    deterministic: bool,
    artifacts: Vec<Artifact>,
}

impl Output {
    pub fn create(root: &Path, deterministic: bool) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Self { root: root.to_path_buf(), deterministic, artifacts: Vec::new() })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Timestamp for SVG comments, suppressed in deterministic mode.
    pub fn stamp(&self) -> Option<u64> {
        (!self.deterministic).then(now)
    }

    pub fn write(&mut self, rel: &str, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        std::fs::write(&path, contents.as_ref()).map_err(|e| CliError::io(&path, e))?;
        self.artifacts.push(artifact(rel.to_string(), contents.as_ref()));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(koopman::Error::from)?;
        text.push('\n');
        self.write(rel, text)
    }

    /// Registers a file already written by another component.
    pub fn record_file(&mut self, rel: &str) -> Result<(), CliError> {
        let path = self.path(rel);
        let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
        self.artifacts.push(artifact(rel.to_string(), &bytes));
        Ok(())
    }

    /// Registers files already written below `rel` by another component.
    pub fn record_tree(&mut self, rel: &str) -> Result<(), CliError> {
        let mut stack = vec![self.path(rel)];
        while let Some(dir) = stack.pop() {
            let entries = std::fs::read_dir(&dir).map_err(|e| CliError::io(&dir, e))?;
            for entry in entries {
                let path = entry.map_err(|e| CliError::io(&dir, e))?.path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
                    let name = path.strip_prefix(&self.root).unwrap_or(&path).components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
                    self.artifacts.push(artifact(name, &bytes));
                }
            }
        }
        Ok(())
    }

    pub fn finish(mut self, mut manifest: ExperimentManifest) -> Result<ExperimentManifest, CliError> {
        self.artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        self.artifacts.dedup_by(|a, b| a.path == b.path);
        manifest.artifacts = std::mem::take(&mut self.artifacts);
        manifest.created_unix = (!self.deterministic).then(now);
        let mut text = serde_json::to_string_pretty(&manifest).map_err(koopman::Error::from)?;
        text.push('\n');
        let path = self.path("manifest.json");
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(manifest)
    }
}

fn artifact(path: String, bytes: &[u8]) -> Artifact {
    Artifact { path, sha256: hex::encode(Sha256::digest(bytes)), bytes: bytes.len() as u64 }
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}
