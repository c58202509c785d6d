//! The `run` subcommand.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use bemps_core::model_space::ModelFamily;
use bemps_core::scoring_rules::RuleRegistry;
use bemps_core::simulator::{run_active_learning, Oracle, Trajectory};

use crate::config::ExperimentConfig;
use crate::manifest::{
    timing_file, trajectory_file, FamilyRecord, FinalMetrics, Manifest, RunRecord, Status,
    FAMILY_FILE,
};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Replaces `output_dir`.
    pub out: Option<PathBuf>,
    /// Worker threads; all cores when unset.
    pub workers: Option<usize>,
    /// Replaces the seed list with this single seed.
    pub seed_override: Option<u64>,
}

/// Loads, validates and executes a config file or manifest. Returns the
/// manifest written to the output directory; a manifest with
/// [`Status::Failed`] means some runs failed and their errors are recorded.
pub fn run(config_path: &Path, options: &RunOptions) -> Result<(PathBuf, Manifest)> {
    let mut config = ExperimentConfig::load(config_path)?;
    if let Some(out) = &options.out {
        config.output_dir = out.clone();
    }
    if let Some(seed) = options.seed_override {
        config.seeds = vec![seed];
    }
    if options.workers == Some(0) {
        bail!("--workers must be positive");
    }
    config.validate(&RuleRegistry::default())?;
    let family = config.load_family()?;
    let dir = config.output_dir.clone();
    let manifest = execute(&config, &family, &dir, options.workers)?;
    Ok((dir, manifest))
}

fn execute(
    config: &ExperimentConfig,
    family: &ModelFamily,
    dir: &Path,
    workers: Option<usize>,
) -> Result<Manifest> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let family_path = dir.join(FAMILY_FILE);
    family
        .write_table(BufWriter::new(File::create(&family_path).with_context(
            || format!("cannot write {}", family_path.display()),
        )?))
        .with_context(|| format!("cannot write {}", family_path.display()))?;

    let mut resolved = config.clone();
    resolved.output_dir = PathBuf::from(".");
    if resolved.family.is_none() {
        resolved.family_file = Some(PathBuf::from(FAMILY_FILE));
    }

    let jobs: Vec<(&str, u64)> = config
        .strategies
        .iter()
        .flat_map(|s| config.seeds.iter().map(move |&seed| (s.as_str(), seed)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .context("cannot start worker pool")?;
    let runs: Vec<RunRecord> = pool.install(|| {
        jobs.par_iter()
            .map(|&(strategy, seed)| run_one(config, family, dir, strategy, seed))
            .collect()
    });

    let status = if runs.iter().all(|r| r.status == Status::Complete) {
        Status::Complete
    } else {
        Status::Failed
    };
    let manifest = Manifest {
        engine_version: bemps_core::VERSION.to_string(),
        status,
        config: resolved,
        family: FamilyRecord {
            file: FAMILY_FILE.into(),
            models: family.num_models(),
            inputs: family.num_inputs(),
            classes: family.num_classes(),
        },
        runs,
    };
    manifest.write(dir)?;
    Ok(manifest)
}

fn run_one(
    config: &ExperimentConfig,
    family: &ModelFamily,
    dir: &Path,
    strategy: &str,
    seed: u64,
) -> RunRecord {
    let mut record = RunRecord {
        strategy: strategy.to_string(),
        seed,
        status: Status::Complete,
        trajectory: trajectory_file(strategy, seed),
        timing: timing_file(strategy, seed),
        last: None,
        error: None,
    };
    match simulate(config, family, dir, &record, seed) {
        Ok(t) => {
            record.last = t.final_record().map(|r| FinalMetrics {
                labelled_count: r.labelled_count,
                weighted_f1: r.weighted_f1,
                accuracy: r.accuracy,
                posterior_mass_true: r.posterior_mass_true,
                truncated: t.truncated,
            });
        }
        Err(e) => {
            record.status = Status::Failed;
            record.error = Some(format!("{e:#}"));
        }
    }
    record
}

fn simulate(
    config: &ExperimentConfig,
    family: &ModelFamily,
    dir: &Path,
    record: &RunRecord,
    seed: u64,
) -> Result<Trajectory> {
    let oracle = Oracle::new(family, config.true_model, seed)?;
    let run = config.run_config(&record.strategy, seed);
    let t = run_active_learning(&run, family, &oracle)?;
    let path = dir.join(&record.trajectory);
    let file = File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
    t.write_csv(BufWriter::new(file))?;
    let path = dir.join(&record.timing);
    let file = File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
    t.write_timing_csv(BufWriter::new(file))?;
    Ok(t)
}
