use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use bemps_cli::compare::{compare, CompareOptions};
use bemps_cli::gen_family::gen_family;
use bemps_cli::manifest::Status;
use bemps_cli::run::{run, RunOptions};
use bemps_cli::verify::{builtin_rules, format_report, verify, VerifyOptions};
use bemps_core::evaluation::Metric;
use bemps_core::model_space::GeneratorSpec;

#[derive(Parser)]
#[command(
    name = "bemps",
    version,
    about = "Active learning experiments with proper scoring rules"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    WeightedF1,
    Accuracy,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::WeightedF1 => Metric::WeightedF1,
            MetricArg::Accuracy => Metric::Accuracy,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run every strategy × seed in a config (TOML) or a previous manifest.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory, replacing the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of concurrent runs (default: all cores).
        #[arg(long)]
        workers: Option<usize>,
        /// Run only this seed.
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Compare strategies across run directories, one dataset per directory.
    Compare {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "weighted-f1")]
        metric: MetricArg,
        /// Compare at labelled-curve indices step, 2·step, …, 5·step.
        #[arg(long)]
        step: Option<usize>,
    },
    /// Run the non-negativity, equivalence and convergence suites.
    Verify {
        /// Random contexts per sweep.
        #[arg(long, default_value_t = 200)]
        instances: usize,
        /// Families in the convergence battery.
        #[arg(long, default_value_t = 20)]
        families: usize,
        /// Label budget per battery run.
        #[arg(long, default_value_t = 300)]
        budget: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw an identifiable model family and write it as CSV.
    GenFamily {
        #[arg(long)]
        models: usize,
        #[arg(long)]
        inputs: usize,
        #[arg(long)]
        classes: usize,
        #[arg(long, default_value_t = 1.0)]
        concentration: f64,
        #[arg(long, default_value_t = 0.05)]
        min_separation: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<bool> {
    match command {
        Command::Run {
            config,
            out,
            workers,
            seed_override,
        } => {
            let options = RunOptions {
                out,
                workers,
                seed_override,
            };
            let (dir, manifest) = run(&config, &options)?;
            for r in &manifest.runs {
                match (&r.last, &r.error) {
                    (Some(last), _) => println!(
                        "{} seed {}: {} labels, weighted F1 {:.4}, accuracy {:.4}, true-model mass {:.4}",
                        r.strategy,
                        r.seed,
                        last.labelled_count,
                        last.weighted_f1,
                        last.accuracy,
                        last.posterior_mass_true
                    ),
                    (None, Some(e)) => eprintln!("{} seed {}: failed: {e}", r.strategy, r.seed),
                    (None, None) => {}
                }
            }
            println!("wrote {}", dir.display());
            Ok(manifest.status == Status::Complete)
        }
        Command::Compare {
            dirs,
            out,
            metric,
            step,
        } => {
            let options = CompareOptions {
                out: out.clone(),
                metric: metric.into(),
                step,
            };
            let matrix = compare(&dirs, &options)?;
            for w in &matrix.warnings {
                eprintln!("warning: {w}");
            }
            for (rank, (method, total)) in matrix.ranking().iter().enumerate() {
                println!("{:>2}. {method} {total}", rank + 1);
            }
            println!("wrote {}", out.display());
            Ok(true)
        }
        Command::Verify {
            instances,
            families,
            budget,
            seed,
            out,
        } => {
            let options = VerifyOptions::sized(instances, families, budget, seed);
            let report = verify(&builtin_rules(), &options)?;
            print!("{}", format_report(&report));
            if let Some(path) = out {
                let text = serde_json::to_string_pretty(&report)?;
                fs::write(&path, text + "\n")
                    .with_context(|| format!("cannot write {}", path.display()))?;
            }
            let passed = report.passed();
            println!(
                "verify: {}",
                if passed {
                    "all suites passed"
                } else {
                    "FAILED"
                }
            );
            Ok(passed)
        }
        Command::GenFamily {
            models,
            inputs,
            classes,
            concentration,
            min_separation,
            seed,
            out,
        } => {
            let spec = GeneratorSpec {
                models,
                inputs,
                classes,
                concentration,
                min_separation,
            };
            let family = gen_family(&spec, seed, &out)?;
            println!(
                "wrote {} ({} models, {} inputs, {} classes)",
                out.display(),
                family.num_models(),
                family.num_inputs(),
                family.num_classes()
            );
            Ok(true)
        }
    }
}
