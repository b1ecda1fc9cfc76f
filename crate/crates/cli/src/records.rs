//! Run artifacts: per-run manifests with checksums, checkpoint manifests,
//! and the helpers that keep every run directory self-describing.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use qpensieve_core::metrics::MetricReport;
use qpensieve_core::seeding::RngState;

use crate::config::Mode;
use crate::HarnessError;

pub fn sha256_file(path: &Path) -> Result<String, HarnessError> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    /// Path relative to the run directory.
    pub path: String,
    pub sha256: String,
}

/// Everything recorded about one seeded run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub mode: Mode,
    pub config_hash: String,
    pub seed: u64,
    pub metrics: Vec<MetricReport>,
    pub artifacts: Vec<ArtifactRecord>,
    pub wall_clock_seconds: f64,
}

impl RunRecord {
    /// Checks that every referenced artifact exists under `run_dir` and
    /// still matches its checksum.
    pub fn verify(&self, run_dir: &Path) -> Result<(), HarnessError> {
        for artifact in &self.artifacts {
            let path = run_dir.join(&artifact.path);
            if !path.exists() {
                return Err(HarnessError::Io(std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("artifact {} missing", path.display()),
                )));
            }
            let digest = sha256_file(&path)?;
            if digest != artifact.sha256 {
                return Err(HarnessError::Io(std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("artifact {} checksum mismatch", path.display()),
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, run_dir: &Path) -> Result<(), HarnessError> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| HarnessError::config(format!("manifest serialization: {e}")))?;
        fs::write(run_dir.join("manifest.json"), json)?;
        Ok(())
    }

    pub fn load(run_dir: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(run_dir.join("manifest.json"))?;
        serde_json::from_str(&text)
            .map_err(|e| HarnessError::config(format!("manifest parse: {e}")))
    }
}

/// Sidecar for a network-bundle checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub config_hash: String,
    pub seed: u64,
    pub env_step: u64,
    pub gradient_step: u64,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub rng_states: Vec<(String, RngState)>,
}

impl CheckpointManifest {
    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| HarnessError::config(format!("checkpoint manifest: {e}")))?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| HarnessError::config(format!("checkpoint manifest parse: {e}")))
    }
}

/// Collects (relative path, checksum) records for a list of files in a run
/// directory.
pub fn collect_artifacts(run_dir: &Path, names: &[&str]) -> Result<Vec<ArtifactRecord>, HarnessError> {
    names
        .iter()
        .map(|name| {
            Ok(ArtifactRecord { path: name.to_string(), sha256: sha256_file(&run_dir.join(name))? })
        })
        .collect()
}

pub fn run_dir_for_seed(out_dir: &Path, seed: u64) -> PathBuf {
    out_dir.join(format!("run-{seed}"))
}
