//! Run directory bookkeeping: every artifact is written atomically and
//! listed with its SHA-256 in `manifest.json`.
//!
//! Wall-clock measurements go to `timings.json` so that all other files
//! depend only on the configuration and seeds.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMINGS_FILE: &str = "timings.json";

/// Writes `bytes` next to `path` and renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    }
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("artifact");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).map_err(|e| LabError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| LabError::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Collects the artifacts of one run.
#[derive(Debug)]
pub struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
    volatile: Vec<String>,
    timings: BTreeMap<String, f64>,
    started: f64,
}

impl Outputs {
    pub fn create(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| LabError::io(&dir, e))?;
        Ok(Self { dir, files: Vec::new(), volatile: Vec::new(), timings: BTreeMap::new(), started: unix_now() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    pub fn write_bytes(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(rel);
        write_atomic(&path, bytes)?;
        if !self.files.iter().any(|f| f == rel) {
            self.files.push(rel.to_string());
        }
        Ok(path)
    }

    pub fn write_text(&mut self, rel: &str, text: &str) -> Result<PathBuf> {
        self.write_bytes(rel, text.as_bytes())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_text(rel, &text)
    }

    /// Writes a CSV built by `fill`.
    pub fn write_csv(
        &mut self,
        rel: &str,
        fill: impl FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> std::result::Result<(), csv::Error>,
    ) -> Result<PathBuf> {
        let mut buf = Vec::new();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            fill(&mut w).map_err(mlspde_core::Error::from)?;
            w.flush().map_err(|e| LabError::io(rel, e))?;
        }
        self.write_bytes(rel, &buf)
    }

    /// Flags an artifact whose content depends on wall-clock time.
    pub fn mark_volatile(&mut self, rel: &str) {
        self.volatile.push(rel.to_string());
    }

    pub fn record_time(&mut self, name: impl Into<String>, seconds: f64) {
        self.timings.insert(name.into(), seconds);
    }

    pub fn timings(&self) -> &BTreeMap<String, f64> {
        &self.timings
    }

    /// Writes the timings file and the manifest.
    pub fn finish(
        mut self,
        kind: &str,
        config_hash: &str,
        outcome: Outcome,
        summary: serde_json::Value,
    ) -> Result<RunManifest> {
        let timings = self.timings.clone();
        self.write_json(TIMINGS_FILE, &timings)?;
        let artifacts = self
            .files
            .iter()
            .map(|rel| {
                let bytes = fs::read(self.dir.join(rel)).map_err(|e| LabError::io(rel, e))?;
                Ok(ArtifactEntry {
                    path: rel.clone(),
                    sha256: sha256_hex(&bytes),
                    bytes: bytes.len() as u64,
                    deterministic: rel != TIMINGS_FILE && !rel.starts_with("timing/") && !self.volatile.contains(rel),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = RunManifest {
            kind: kind.to_string(),
            config_hash: config_hash.to_string(),
            code_version: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).to_string(),
            started_unix: self.started,
            finished_unix: unix_now(),
            outcome,
            artifacts,
            summary,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        write_atomic(&self.dir.join(MANIFEST_FILE), text.as_bytes())?;
        Ok(manifest)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
    /// False for wall-clock data, which differs between runs.
    pub deterministic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "status")]
pub enum Outcome {
    Passed,
    Failed { failures: Vec<String> },
    Error { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub kind: String,
    pub config_hash: String,
    pub code_version: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub outcome: Outcome,
    pub artifacts: Vec<ArtifactEntry>,
    pub summary: serde_json::Value,
}

impl RunManifest {
    /// Loads `manifest.json` from `dir` and re-hashes every artifact.
    pub fn load_verified(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| LabError::io(&path, e))?;
        let manifest: RunManifest = serde_json::from_str(&text)?;
        for a in &manifest.artifacts {
            let p = dir.join(&a.path);
            let bytes = fs::read(&p).map_err(|e| LabError::io(&p, e))?;
            let got = sha256_hex(&bytes);
            if got != a.sha256 {
                return Err(LabError::Manifest(format!("{}: expected sha256 {}, found {got}", a.path, a.sha256)));
            }
        }
        Ok(manifest)
    }

    pub fn artifact(&self, path: &str) -> Option<&ArtifactEntry> {
        self.artifacts.iter().find(|a| a.path == path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lists_and_verifies_every_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = Outputs::create(dir.path()).unwrap();
        out.write_text("a.txt", "alpha\n").unwrap();
        out.write_json("sub/b.json", &vec![1.0, 2.5]).unwrap();
        out.write_text("a.txt", "alpha again\n").unwrap();
        out.record_time("step", 0.25);
        let m = out.finish("test", "abc", Outcome::Passed, serde_json::json!({"x": 1})).unwrap();
        assert_eq!(m.artifacts.len(), 3);
        assert!(!m.artifact(TIMINGS_FILE).unwrap().deterministic);
        assert!(m.artifact("a.txt").unwrap().deterministic);
        let back = RunManifest::load_verified(dir.path()).unwrap();
        assert_eq!(back, m);
        fs::write(dir.path().join("a.txt"), "tampered").unwrap();
        assert!(matches!(RunManifest::load_verified(dir.path()), Err(LabError::Manifest(_))));
        // No temporary files are left behind.
        let names: Vec<String> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
        assert!(names.iter().all(|n| !n.ends_with(".tmp")));
    }
}
