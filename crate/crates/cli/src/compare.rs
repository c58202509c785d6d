//! The `compare` subcommand.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use bemps_core::evaluation::{
    comparison_matrix, write_curves_csv, ComparisonMatrix, CurvePoint, CurveSet, Metric,
    MetricSeries,
};
use bemps_core::simulator::Trajectory;

use crate::manifest::{Manifest, Status};

pub const MATRIX_FILE: &str = "comparison_matrix.csv";
pub const LONG_FILE: &str = "comparison_long.csv";
pub const CURVES_FILE: &str = "curves.csv";

#[derive(Debug, Clone)]
pub struct CompareOptions {
    pub out: PathBuf,
    pub metric: Metric,
    pub step: Option<usize>,
}

/// Treats each run directory as one dataset, averages every strategy's
/// curves over its seeds and builds the comparison matrix.
pub fn compare(dirs: &[PathBuf], options: &CompareOptions) -> Result<ComparisonMatrix> {
    if dirs.is_empty() {
        bail!("no run directories given");
    }
    let mut curves = CurveSet::new();
    let mut methods: Vec<String> = Vec::new();
    let mut warnings = Vec::new();
    for dir in dirs {
        let name = dataset_name(dir);
        if curves.contains_key(&name) {
            bail!("two run directories are both named {name:?}");
        }
        let manifest = Manifest::read(dir)?;
        let mut by_strategy: BTreeMap<String, Vec<MetricSeries>> = BTreeMap::new();
        for run in &manifest.runs {
            if run.status != Status::Complete {
                warnings.push(format!(
                    "{name}: skipping failed run {} seed {}",
                    run.strategy, run.seed
                ));
                continue;
            }
            if !methods.contains(&run.strategy) {
                methods.push(run.strategy.clone());
            }
            by_strategy
                .entry(run.strategy.clone())
                .or_default()
                .push(read_curve(&dir.join(&run.trajectory))?);
        }
        let mut averaged = BTreeMap::new();
        for (strategy, series) in by_strategy {
            match MetricSeries::mean(&series) {
                Ok(mean) => {
                    averaged.insert(strategy, mean);
                }
                Err(e) => warnings.push(format!(
                    "{name}: cannot average {strategy} over seeds ({e})"
                )),
            }
        }
        curves.insert(name, averaged);
    }

    let mut matrix = comparison_matrix(&curves, &methods, options.metric, options.step);
    warnings.append(&mut matrix.warnings);
    matrix.warnings = warnings;

    fs::create_dir_all(&options.out)
        .with_context(|| format!("cannot create {}", options.out.display()))?;
    matrix.write_csv(create(&options.out.join(MATRIX_FILE))?)?;
    matrix.write_long_csv(create(&options.out.join(LONG_FILE))?)?;
    write_curves_csv(&curves, create(&options.out.join(CURVES_FILE))?)?;
    Ok(matrix)
}

fn dataset_name(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| {
        format!("cannot write {}", path.display())
    })?))
}

fn read_curve(path: &Path) -> Result<MetricSeries> {
    let file = File::open(path).with_context(|| format!("cannot read {}", path.display()))?;
    let records = Trajectory::read_records(file)
        .with_context(|| format!("invalid trajectory {}", path.display()))?;
    let points = records
        .iter()
        .map(|r| CurvePoint {
            labelled: r.labelled_count,
            weighted_f1: r.weighted_f1,
            accuracy: r.accuracy,
        })
        .collect();
    MetricSeries::new(points).with_context(|| format!("invalid curve {}", path.display()))
}
