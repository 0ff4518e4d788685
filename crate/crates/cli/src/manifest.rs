//! Run manifest: what ran, what it wrote, how long it took.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ok,
    /// Finished with some outputs missing (e.g. one model diverged).
    Partial,
    Failed,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub status: StageStatus,
    /// Paths relative to the output directory.
    pub files: Vec<String>,
    pub diagnostics: Vec<String>,
    pub wall_time_s: f64,
    /// Process exit code this stage asks for (0 when fine).
    pub exit_code: i32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    /// SHA-256 of the canonical JSON form of the resolved config.
    pub config_hash: String,
    pub seed: u64,
    pub scale: f64,
    pub versions: BTreeMap<String, String>,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn new(cfg: &ExperimentConfig, scale: f64) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert("moment-cli".into(), env!("CARGO_PKG_VERSION").into());
        versions.insert("moment-core".into(), moment_core::VERSION.into());
        versions.insert("moment-convergence".into(), moment_convergence::VERSION.into());
        Self {
            name: cfg.name.clone(),
            config_hash: config_hash(cfg),
            seed: cfg.seed,
            scale,
            versions,
            stages: Vec::new(),
        }
    }

    /// First nonzero stage exit code, or 0.
    pub fn exit_code(&self) -> i32 {
        self.stages.iter().map(|s| s.exit_code).find(|&c| c != 0).unwrap_or(0)
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.stage == name)
    }
}

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let canonical = serde_json::to_string(cfg).expect("configs serialize to JSON");
    format!("{:x}", Sha256::digest(canonical.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    #[test]
    fn hash_tracks_config_changes() {
        let a = presets::load("fig2").unwrap();
        let mut b = a.clone();
        assert_eq!(config_hash(&a), config_hash(&b));
        b.seed += 1;
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
    }
}
