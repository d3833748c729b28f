//! Run manifest: artifact hashes per pipeline stage.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use chrono::DateTime;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "folio-run";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub completed_at: String,
    pub artifacts: Vec<Artifact>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub code_version: String,
    pub seed: u64,
    /// Hash of the whole run config, output directory excluded.
    pub config_hash: String,
    /// Hash of the inputs that determine the trained checkpoints.
    pub train_key: String,
    pub stages: BTreeMap<String, Stage>,
    /// Hash over the config hash and every artifact hash; independent of
    /// timestamps, so equal fingerprints mean reproduced outputs.
    pub fingerprint: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> std::io::Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

pub fn timestamp() -> String {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs() as i64)
        .unwrap_or(0);
    DateTime::from_timestamp(secs, 0)
        .map(|t| t.to_rfc3339())
        .unwrap_or_default()
}

impl RunManifest {
    pub fn new(seed: u64, config_hash: String, train_key: String) -> Self {
        let mut m = Self {
            format: MANIFEST_FORMAT.into(),
            code_version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config_hash,
            train_key,
            stages: BTreeMap::new(),
            fingerprint: String::new(),
        };
        m.fingerprint = m.compute_fingerprint();
        m
    }

    /// Hashes `paths` (relative to `dir`) and records them as `stage`.
    pub fn record_stage(&mut self, dir: &Path, stage: &str, paths: &[String]) -> CliResult<()> {
        let mut artifacts = Vec::with_capacity(paths.len());
        for p in paths {
            let sha256 = hash_file(&dir.join(p)).map_err(|e| CliError::output(&dir.join(p), e))?;
            artifacts.push(Artifact {
                path: p.clone(),
                sha256,
            });
        }
        self.stages.insert(
            stage.into(),
            Stage {
                completed_at: timestamp(),
                artifacts,
            },
        );
        self.fingerprint = self.compute_fingerprint();
        Ok(())
    }

    pub fn compute_fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.config_hash.as_bytes());
        h.update(b"\n");
        for (name, stage) in &self.stages {
            for a in &stage.artifacts {
                h.update(format!("{name} {} {}\n", a.path, a.sha256).as_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn artifact(&self, stage: &str, path: &str) -> Option<&Artifact> {
        self.stages
            .get(stage)?
            .artifacts
            .iter()
            .find(|a| a.path == path)
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, json + "\n").map_err(|e| CliError::output(&path, e))
    }

    /// Reads a manifest, failing with an integrity error when it is missing
    /// or malformed.
    pub fn read(dir: &Path) -> CliResult<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Integrity(format!("{}: {e}", path.display())))?;
        let m: RunManifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Integrity(format!("{}: {e}", path.display())))?;
        if m.format != MANIFEST_FORMAT {
            return Err(CliError::Integrity(format!(
                "{}: unexpected format `{}`",
                path.display(),
                m.format
            )));
        }
        Ok(m)
    }

    /// Checks the fingerprint and re-hashes every listed artifact.
    pub fn verify(&self, dir: &Path) -> CliResult<()> {
        if self.fingerprint != self.compute_fingerprint() {
            return Err(CliError::Integrity("manifest fingerprint does not match its contents".into()));
        }
        for stage in self.stages.values() {
            for a in &stage.artifacts {
                let path = dir.join(&a.path);
                let actual = hash_file(&path)
                    .map_err(|e| CliError::Integrity(format!("{}: {e}", path.display())))?;
                if actual != a.sha256 {
                    return Err(CliError::Integrity(format!(
                        "{} does not match its recorded hash",
                        a.path
                    )));
                }
            }
        }
        Ok(())
    }
}
