//! Machine-readable run reports: per-stage timings, invariant-check
//! results and artifact content hashes.

use roam_core::error::Result;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub stages: Vec<StageReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageReport {
    pub name: String,
    pub millis: u128,
    pub checks: Vec<CheckResult>,
    pub artifacts: Vec<ArtifactRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub path: String,
    pub sha256: String,
}

impl RunReport {
    pub fn all_checks_passed(&self) -> bool {
        self.stages.iter().all(|s| s.checks.iter().all(|c| c.passed))
    }

    pub fn failed_checks(&self) -> Vec<(&str, &CheckResult)> {
        self.stages
            .iter()
            .flat_map(|s| s.checks.iter().filter(|c| !c.passed).map(move |c| (s.name.as_str(), c)))
            .collect()
    }

    /// Stable map of artifact path to hash, for cross-run comparisons.
    pub fn artifact_hashes(&self) -> std::collections::BTreeMap<&str, &str> {
        self.stages
            .iter()
            .flat_map(|s| s.artifacts.iter())
            .map(|a| (a.path.as_str(), a.sha256.as_str()))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let digest = hasher.finalize();
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Collects a stage's timing, checks and hashed artifacts.
pub struct StageRecorder {
    name: String,
    started: std::time::Instant,
    root: PathBuf,
    checks: Vec<CheckResult>,
    artifacts: Vec<ArtifactRecord>,
}

impl StageRecorder {
    pub fn new(name: &str, root: &Path) -> Self {
        StageRecorder {
            name: name.to_string(),
            started: std::time::Instant::now(),
            root: root.to_path_buf(),
            checks: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        let detail = detail.into();
        if !passed {
            log::warn!("check failed [{}/{name}]: {detail}", self.name);
        }
        self.checks.push(CheckResult { name: name.to_string(), passed, detail });
    }

    pub fn artifact(&mut self, path: &Path) -> Result<()> {
        let rel = path.strip_prefix(&self.root).unwrap_or(path);
        self.artifacts.push(ArtifactRecord {
            path: rel.to_string_lossy().into_owned(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn finish(self) -> StageReport {
        StageReport {
            name: self.name,
            millis: self.started.elapsed().as_millis(),
            checks: self.checks,
            artifacts: self.artifacts,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashes_are_stable_and_hex() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        std::fs::write(&p, b"hello").unwrap();
        let h = sha256_file(&p).unwrap();
        assert_eq!(h, "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824");
    }

    #[test]
    fn recorder_tracks_checks_and_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        std::fs::write(&p, b"artifact").unwrap();
        let mut rec = StageRecorder::new("demo", dir.path());
        rec.check("ok", true, "fine");
        rec.check("bad", false, "broken");
        rec.artifact(&p).unwrap();
        let stage = rec.finish();
        assert_eq!(stage.checks.len(), 2);
        assert_eq!(stage.artifacts.len(), 1);
        assert_eq!(stage.artifacts[0].path, "a.txt");
        let report = RunReport { seed: 0, stages: vec![stage] };
        assert!(!report.all_checks_passed());
        assert_eq!(report.failed_checks().len(), 1);
    }
}
