//! Run manifests: what was run, with which inputs, and digests of every
//! output.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Ok(FileDigest { path: path.to_path_buf(), sha256: sha256_file(path)? })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub software: String,
    pub version: String,
    pub command: String,
    pub args: Vec<String>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    /// Full configuration as resolved for the run.
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    /// Model or trend files read by the run.
    pub models: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    /// Choices and fallbacks worth knowing when re-running.
    pub notes: Vec<String>,
    pub started_unix: f64,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>, config: serde_json::Value) -> Self {
        let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        RunManifest {
            software: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            args,
            seed: None,
            threads: None,
            config,
            inputs: Vec::new(),
            models: Vec::new(),
            outputs: Vec::new(),
            notes: Vec::new(),
            started_unix: started,
            wall_clock_seconds: 0.0,
        }
    }

    pub fn input(&mut self, path: impl AsRef<Path>) -> Result<()> {
        self.inputs.push(FileDigest::of(path)?);
        Ok(())
    }

    pub fn model(&mut self, path: impl AsRef<Path>) -> Result<()> {
        self.models.push(FileDigest::of(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: impl AsRef<Path>) -> Result<()> {
        self.outputs.push(FileDigest::of(path)?);
        Ok(())
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }

    pub fn finish(&mut self, started: Instant) {
        self.wall_clock_seconds = started.elapsed().as_secs_f64();
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}
