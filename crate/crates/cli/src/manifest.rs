//! Run manifests.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FAMILY_FILE: &str = "family.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyRecord {
    pub file: String,
    pub models: usize,
    pub inputs: usize,
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub labelled_count: usize,
    pub weighted_f1: f64,
    pub accuracy: f64,
    pub posterior_mass_true: f64,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub strategy: String,
    pub seed: u64,
    pub status: Status,
    pub trajectory: String,
    pub timing: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last: Option<FinalMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Everything needed to reproduce the files next to it. The config is stored
/// resolved, with paths relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub engine_version: String,
    pub status: Status,
    pub config: ExperimentConfig,
    pub family: FamilyRecord,
    pub runs: Vec<RunRecord>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text =
            fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("invalid manifest {}", path.display()))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))
    }
}

pub fn trajectory_file(strategy: &str, seed: u64) -> String {
    format!("{strategy}_seed{seed}.csv")
}

pub fn timing_file(strategy: &str, seed: u64) -> String {
    format!("{strategy}_seed{seed}_timing.csv")
}
