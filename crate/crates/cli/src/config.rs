//! Experiment configuration files.
//!
//! A configuration is a flat TOML file. Run parameters sit at the top level,
//! the family comes either from a `[family]` generator table or from a
//! `family_file` written by `gen-family`:
//!
//! ```toml
//! output_dir = "runs/demo"
//! strategies = ["core_mse", "core_log", "bald", "max_ent", "random"]
//! seeds = [0, 1, 2, 3, 4]
//! batch_size = 1
//! budget = 300
//! true_model = 0
//!
//! [family]
//! models = 10
//! inputs = 50
//! classes = 3
//! seed = 7
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use bemps_core::model_space::{sample_family, GeneratorSpec, ModelFamily};
use bemps_core::scoring_rules::RuleRegistry;
use bemps_core::simulator::{BatchSelection, EnsembleMode, RunConfig};

use crate::manifest::Manifest;

pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    pub models: usize,
    pub inputs: usize,
    pub classes: usize,
    #[serde(default = "default_concentration")]
    pub concentration: f64,
    #[serde(default = "default_separation")]
    pub min_separation: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_concentration() -> f64 {
    GeneratorSpec::new(1, 1, 1).concentration
}

fn default_separation() -> f64 {
    GeneratorSpec::new(1, 1, 1).min_separation
}

impl FamilyConfig {
    pub fn generator(&self) -> GeneratorSpec {
        GeneratorSpec {
            models: self.models,
            inputs: self.inputs,
            classes: self.classes,
            concentration: self.concentration,
            min_separation: self.min_separation,
        }
    }
}

fn defaults() -> RunConfig {
    RunConfig::default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub strategies: Vec<String>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "d_batch_size")]
    pub batch_size: usize,
    #[serde(default = "d_budget")]
    pub budget: usize,
    #[serde(default = "d_initial_size")]
    pub initial_size: usize,
    #[serde(default = "d_pool_size")]
    pub pool_size: usize,
    #[serde(default = "d_estimation_pool_size")]
    pub estimation_pool_size: usize,
    #[serde(default = "d_test_size")]
    pub test_size: usize,
    #[serde(default = "d_ensemble_mode")]
    pub ensemble_mode: EnsembleMode,
    #[serde(default = "d_ensemble_size")]
    pub ensemble_size: usize,
    #[serde(default = "d_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "d_prior_concentration")]
    pub prior_concentration: f64,
    #[serde(default = "d_top_fraction")]
    pub top_fraction: f64,
    #[serde(default = "d_kmeans_max_iters")]
    pub kmeans_max_iters: usize,
    #[serde(default = "d_batch_selection")]
    pub batch_selection: BatchSelection,
    #[serde(default = "d_wmocu_k")]
    pub wmocu_k: f64,
    #[serde(default)]
    pub true_model: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<FamilyConfig>,
}

fn default_seeds() -> Vec<u64> {
    DEFAULT_SEEDS.to_vec()
}
fn d_batch_size() -> usize {
    defaults().batch_size
}
fn d_budget() -> usize {
    defaults().budget
}
fn d_initial_size() -> usize {
    defaults().initial_size
}
fn d_pool_size() -> usize {
    defaults().pool_size
}
fn d_estimation_pool_size() -> usize {
    defaults().estimation_pool_size
}
fn d_test_size() -> usize {
    defaults().test_size
}
fn d_ensemble_mode() -> EnsembleMode {
    defaults().ensemble_mode
}
fn d_ensemble_size() -> usize {
    defaults().ensemble_size
}
fn d_train_fraction() -> f64 {
    defaults().train_fraction
}
fn d_prior_concentration() -> f64 {
    defaults().prior_concentration
}
fn d_top_fraction() -> f64 {
    defaults().top_fraction
}
fn d_kmeans_max_iters() -> usize {
    defaults().kmeans_max_iters
}
fn d_batch_selection() -> BatchSelection {
    defaults().batch_selection
}
fn d_wmocu_k() -> f64 {
    defaults().wmocu_k
}

impl ExperimentConfig {
    /// Reads a TOML config, or the resolved config inside a JSON manifest.
    /// Relative `family_file` and `output_dir` paths resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut config: ExperimentConfig = if path.extension().is_some_and(|e| e == "json") {
            let manifest: Manifest = serde_json::from_str(&text)
                .with_context(|| format!("invalid manifest {}", path.display()))?;
            manifest.config
        } else {
            toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(file) = &config.family_file {
            if file.is_relative() {
                config.family_file = Some(base.join(file));
            }
        }
        if config.output_dir.is_relative() {
            config.output_dir = base.join(&config.output_dir);
        }
        Ok(config)
    }

    pub fn run_config(&self, strategy: &str, seed: u64) -> RunConfig {
        RunConfig {
            strategy: strategy.to_string(),
            batch_size: self.batch_size,
            budget: self.budget,
            initial_size: self.initial_size,
            pool_size: self.pool_size,
            estimation_pool_size: self.estimation_pool_size,
            test_size: self.test_size,
            ensemble_mode: self.ensemble_mode,
            ensemble_size: self.ensemble_size,
            train_fraction: self.train_fraction,
            prior_concentration: self.prior_concentration,
            top_fraction: self.top_fraction,
            kmeans_max_iters: self.kmeans_max_iters,
            batch_selection: self.batch_selection,
            wmocu_k: self.wmocu_k,
            seed,
        }
    }

    /// Checks every field; errors name the offending key.
    pub fn validate(&self, registry: &RuleRegistry) -> Result<()> {
        if self.strategies.is_empty() {
            bail!("field `strategies`: at least one strategy is required");
        }
        let mut seen = BTreeSet::new();
        for (i, name) in self.strategies.iter().enumerate() {
            if !seen.insert(name) {
                bail!("field `strategies[{i}]`: duplicate strategy {name:?}");
            }
        }
        if self.seeds.is_empty() {
            bail!("field `seeds`: at least one seed is required");
        }
        let mut seen = BTreeSet::new();
        for (i, seed) in self.seeds.iter().enumerate() {
            if !seen.insert(seed) {
                bail!("field `seeds[{i}]`: duplicate seed {seed}");
            }
        }
        match (&self.family, &self.family_file) {
            (Some(_), Some(_)) => bail!("fields `family` and `family_file` are mutually exclusive"),
            (None, None) => bail!("field `family`: give a [family] table or a family_file"),
            _ => {}
        }
        for (i, name) in self.strategies.iter().enumerate() {
            let run = self.run_config(name, self.seeds[0]);
            if let Err(e) = run.validate(registry) {
                let known: Vec<&str> = bemps_core::acquisition::STRATEGY_NAMES
                    .iter()
                    .copied()
                    .chain(registry.names().filter(|n| !n.starts_with("core_")))
                    .collect();
                let message = e.to_string();
                if message.contains("unknown strategy") {
                    bail!(
                        "field `strategies[{i}]`: unknown strategy {name:?} (known: {})",
                        known.join(", ")
                    );
                }
                bail!("{}", message.trim_start_matches("invalid configuration: "));
            }
        }
        Ok(())
    }

    pub fn load_family(&self) -> Result<ModelFamily> {
        let family = match (&self.family, &self.family_file) {
            (Some(spec), _) => sample_family(&spec.generator(), spec.seed)
                .context("field `family`: cannot generate family")?,
            (None, Some(path)) => {
                let file = fs::File::open(path).with_context(|| {
                    format!("field `family_file`: cannot open {}", path.display())
                })?;
                ModelFamily::read_table(file).with_context(|| {
                    format!("field `family_file`: invalid family {}", path.display())
                })?
            }
            (None, None) => bail!("field `family`: give a [family] table or a family_file"),
        };
        if self.true_model >= family.num_models() {
            bail!(
                "field `true_model`: {} is out of range for {} models",
                self.true_model,
                family.num_models()
            );
        }
        if family.prior()[self.true_model] <= 0.0 {
            bail!(
                "field `true_model`: model {} has zero prior weight",
                self.true_model
            );
        }
        Ok(family)
    }
}
