//! Experiment manifests.
//!
//! Every command that produces artifacts writes a manifest next to them: the
//! full configuration snapshot (including applied overrides), the effective
//! seed list, the code and checkpoint-format versions, content hashes of
//! produced model weights, wall-clock timings, and the path of every
//! artifact. Re-running the recorded command with the recorded config and
//! seeds reproduces the artifacts bit-for-bit on one device, which the
//! recorded hashes make checkable.
//!
//! [`ExperimentManifest::save`] refuses to write a manifest that references
//! a missing artifact, so a manifest on disk implies its artifacts exist.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::model::CHECKPOINT_VERSION;

/// Provenance record for one command invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    /// Subcommand that produced the artifacts.
    pub command: String,
    /// Crate version that ran.
    pub code_version: String,
    /// Checkpoint format the artifacts use.
    pub checkpoint_version: u32,
    /// Unix timestamp of the invocation.
    pub created_unix: u64,
    /// Seeds actually used (after any environment override).
    pub seeds: Vec<u64>,
    /// `--set` pairs that were applied on top of the config file.
    pub overrides: Vec<String>,
    /// The fully-resolved flat configuration.
    pub config: ExperimentConfig,
    /// Name → path of every produced artifact.
    pub artifacts: BTreeMap<String, PathBuf>,
    /// Name → hex SHA-256 of produced model weights.
    pub hashes: BTreeMap<String, String>,
    /// Name → elapsed wall-clock seconds of each phase.
    pub timings_seconds: BTreeMap<String, f64>,
}

impl ExperimentManifest {
    pub fn new(
        command: impl Into<String>,
        config: &ExperimentConfig,
        seeds: &[u64],
        overrides: &[String],
    ) -> Self {
        ExperimentManifest {
            command: command.into(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            checkpoint_version: CHECKPOINT_VERSION,
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            seeds: seeds.to_vec(),
            overrides: overrides.to_vec(),
            config: config.clone(),
            artifacts: BTreeMap::new(),
            hashes: BTreeMap::new(),
            timings_seconds: BTreeMap::new(),
        }
    }

    pub fn record_artifact(&mut self, name: impl Into<String>, path: impl Into<PathBuf>) {
        self.artifacts.insert(name.into(), path.into());
    }

    pub fn record_hash(&mut self, name: impl Into<String>, hex: impl Into<String>) {
        self.hashes.insert(name.into(), hex.into());
    }

    /// Record the elapsed time of a phase started at `started`.
    pub fn record_timing(&mut self, name: impl Into<String>, started: Instant) {
        self.timings_seconds
            .insert(name.into(), started.elapsed().as_secs_f64());
    }

    /// Check that every recorded artifact path exists.
    pub fn verify_artifacts(&self) -> Result<()> {
        for (name, path) in &self.artifacts {
            if !path.exists() {
                return Err(Error::Report(format!(
                    "manifest artifact '{name}' is missing at {}",
                    path.display()
                )));
            }
        }
        Ok(())
    }

    /// Verify the artifacts, then write pretty JSON.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.verify_artifacts()?;
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<ExperimentManifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
