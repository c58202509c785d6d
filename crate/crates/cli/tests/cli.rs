use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use bemps_cli::manifest::{Manifest, Status};
use bemps_cli::verify::{verify, VerifyOptions};
use bemps_core::scoring_rules::{CoreLog, CustomRule, RuleHandle};

const TINY: &str = r#"
output_dir = "out"
strategies = ["core_mse"]
seeds = [0]
budget = 36
pool_size = 80
estimation_pool_size = 40
test_size = 60

[family]
models = 4
inputs = 10
classes = 3
seed = 11
"#;

fn bemps(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bemps"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("experiment.toml");
    fs::write(&path, text).unwrap();
    path
}

fn run_ok(config: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--config", config.to_str().unwrap()];
    args.extend_from_slice(extra);
    let out = bemps(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn minimal_config_writes_one_trajectory_and_a_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), TINY);
    run_ok(&config, &[]);
    let out = tmp.path().join("out");
    let trajectory = fs::read_to_string(out.join("core_mse_seed0.csv")).unwrap();
    let mut lines = trajectory.lines();
    assert_eq!(
        lines.next().unwrap(),
        "iteration,labelled_count,weighted_f1,accuracy,posterior_mass_true,max_score,acquired"
    );
    assert_eq!(lines.count(), 11);
    assert!(out.join("core_mse_seed0_timing.csv").exists());

    let manifest = Manifest::read(&out).unwrap();
    assert_eq!(manifest.status, Status::Complete);
    assert_eq!(manifest.engine_version, bemps_core::VERSION);
    assert_eq!(manifest.runs.len(), 1);
    assert_eq!(manifest.runs[0].last.as_ref().unwrap().labelled_count, 36);
    assert_eq!(manifest.config.budget, 36);
    assert_eq!(manifest.config.output_dir, PathBuf::from("."));
    assert_eq!(manifest.family.models, 4);
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        &TINY
            .replace(r#"["core_mse"]"#, r#"["core_mse", "core_log", "random"]"#)
            .replace("seeds = [0]", "seeds = [0, 1]"),
    );
    let names = [
        "core_mse_seed0.csv",
        "core_log_seed1.csv",
        "random_seed1.csv",
        "family.csv",
        "manifest.json",
    ];
    let read = |dir: &Path| -> Vec<Vec<u8>> {
        names
            .iter()
            .map(|n| fs::read(dir.join(n)).unwrap())
            .collect()
    };

    run_ok(&config, &["--workers", "2"]);
    let first = read(&tmp.path().join("out"));
    run_ok(&config, &["--workers", "1"]);
    assert_eq!(first, read(&tmp.path().join("out")));

    // the manifest alone reproduces every output
    let copy = tmp.path().join("copy");
    let manifest = tmp.path().join("out").join("manifest.json");
    run_ok(&manifest, &["--out", copy.to_str().unwrap()]);
    assert_eq!(first, read(&copy));
}

#[test]
fn unknown_strategy_fails_naming_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &TINY.replace("core_mse", "corexyz"));
    let out = bemps(&["run", "--config", config.to_str().unwrap()]);
    assert!(!out.status.success());
    let message = stderr(&out);
    assert!(
        message.contains("strategies[0]") && message.contains("corexyz"),
        "{message}"
    );
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn syntax_errors_and_unknown_keys_report_line_and_key() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &TINY.replace("budget = 36", "budget = "));
    let out = bemps(&["run", "--config", config.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("line 5"), "{}", stderr(&out));

    let config = write_config(tmp.path(), &TINY.replace("budget = 36", "budgte = 36"));
    let out = bemps(&["run", "--config", config.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("budgte"), "{}", stderr(&out));

    let config = write_config(tmp.path(), &TINY.replace("budget = 36", "budget = 10"));
    let out = bemps(&["run", "--config", config.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("budget"), "{}", stderr(&out));
}

#[test]
fn failed_run_keeps_other_outputs_and_writes_a_failure_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        &TINY.replace(r#"["core_mse"]"#, r#"["core_mse", "random"]"#),
    );
    // a directory where the trajectory file should go makes that run fail
    fs::create_dir_all(tmp.path().join("out").join("random_seed0.csv")).unwrap();
    let out = bemps(&["run", "--config", config.to_str().unwrap()]);
    assert!(!out.status.success());
    let dir = tmp.path().join("out");
    assert!(dir.join("core_mse_seed0.csv").is_file());
    let manifest = Manifest::read(&dir).unwrap();
    assert_eq!(manifest.status, Status::Failed);
    let failed = manifest
        .runs
        .iter()
        .find(|r| r.strategy == "random")
        .unwrap();
    assert_eq!(failed.status, Status::Failed);
    assert!(failed.error.as_ref().unwrap().contains("random_seed0.csv"));
    let ok = manifest
        .runs
        .iter()
        .find(|r| r.strategy == "core_mse")
        .unwrap();
    assert_eq!(ok.status, Status::Complete);
}

#[test]
fn seed_override_runs_a_single_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        &TINY.replace("seeds = [0]", "seeds = [0, 1, 2]"),
    );
    run_ok(&config, &["--seed-override", "7"]);
    let manifest = Manifest::read(&tmp.path().join("out")).unwrap();
    assert_eq!(manifest.config.seeds, vec![7]);
    assert_eq!(manifest.runs.len(), 1);
    assert!(tmp.path().join("out").join("core_mse_seed7.csv").exists());
    assert!(!tmp.path().join("out").join("core_mse_seed0.csv").exists());
}

#[test]
fn generated_family_file_drives_a_run() {
    let tmp = tempfile::tempdir().unwrap();
    let family = tmp.path().join("families").join("f.csv");
    let out = bemps(&[
        "gen-family",
        "--models",
        "5",
        "--inputs",
        "8",
        "--classes",
        "2",
        "--seed",
        "3",
        "--out",
        family.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let table = fs::read_to_string(&family).unwrap();
    assert_eq!(table.lines().next().unwrap(), "model,input,prior,p0,p1");
    assert_eq!(table.lines().count(), 1 + 5 * 8);

    let text = TINY
        .split("[family]")
        .next()
        .unwrap()
        .replace("output_dir", "family_file = \"families/f.csv\"\noutput_dir");
    let config = write_config(tmp.path(), &text);
    run_ok(&config, &[]);
    let dir = tmp.path().join("out");
    assert_eq!(fs::read_to_string(dir.join("family.csv")).unwrap(), table);
    let manifest = Manifest::read(&dir).unwrap();
    assert_eq!(
        manifest.config.family_file,
        Some(PathBuf::from("family.csv"))
    );
    assert_eq!(manifest.family.inputs, 8);
}

/// Writes a curve whose weighted F1 values are `f1` at 26, 27, … labels.
fn write_curve(path: &Path, f1: &[f64]) {
    let mut text = String::from(
        "iteration,labelled_count,weighted_f1,accuracy,posterior_mass_true,max_score,acquired\n",
    );
    for (i, v) in f1.iter().enumerate() {
        text.push_str(&format!("{i},{},{v},{v},0.5,,\n", 26 + i));
    }
    fs::write(path, text).unwrap();
}

#[test]
fn compare_counts_significant_wins_per_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        &TINY
            .replace(r#"["core_mse"]"#, r#"["core_mse", "random"]"#)
            .replace("budget = 36", "budget = 31"),
    );
    let base = [0.50, 0.52, 0.55, 0.57, 0.60, 0.62];
    // differences at the five comparison points: mean 0.15, sd ≈ 0.05, t ≈ 6.7
    let better = [0.50, 0.62, 0.75, 0.67, 0.80, 0.77];
    let mut dirs = Vec::new();
    for name in ["alpha", "beta"] {
        let dir = tmp.path().join(name);
        run_ok(&config, &["--out", dir.to_str().unwrap()]);
        write_curve(&dir.join("core_mse_seed0.csv"), &better);
        write_curve(&dir.join("random_seed0.csv"), &base);
        dirs.push(dir);
    }
    let report = tmp.path().join("report");
    let out = bemps(&[
        "compare",
        dirs[0].to_str().unwrap(),
        dirs[1].to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("1. core_mse 2"), "{stdout}");
    assert_eq!(
        fs::read_to_string(report.join("comparison_matrix.csv")).unwrap(),
        "method,core_mse,random,total\ncore_mse,0,2,2\nrandom,0,0,0\n"
    );
    let long = fs::read_to_string(report.join("comparison_long.csv")).unwrap();
    assert!(long.contains("core_mse,random,alpha,1") && long.contains("random,core_mse,beta,0"));
    let curves = fs::read_to_string(report.join("curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 1 + 2 * 2 * 6);

    // a strategy missing from one dataset makes that dataset's pairs incomparable
    let mut manifest = Manifest::read(&dirs[1]).unwrap();
    manifest.runs.retain(|r| r.strategy == "core_mse");
    manifest.write(&dirs[1]).unwrap();
    let out = bemps(&[
        "compare",
        dirs[0].to_str().unwrap(),
        dirs[1].to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(
        stderr(&out).contains("beta: core_mse vs random incomparable"),
        "{}",
        stderr(&out)
    );
    assert!(fs::read_to_string(report.join("comparison_matrix.csv"))
        .unwrap()
        .contains("core_mse,0,1,1"));
}

#[test]
fn verify_passes_and_writes_a_report() {
    let tmp = tempfile::tempdir().unwrap();
    let json = tmp.path().join("report.json");
    let out = bemps(&[
        "verify",
        "--instances",
        "25",
        "--families",
        "2",
        "--budget",
        "60",
        "--out",
        json.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    for name in [
        "nonnegativity/core_mse",
        "nonnegativity/bald",
        "equivalence/objective_forms/core_log",
        "convergence/mass/core_mse",
    ] {
        assert!(stdout.contains(&format!("PASS {name}:")), "{stdout}");
    }
    assert!(!stdout.contains("FAIL"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(json).unwrap()).unwrap();
    let forms = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == "equivalence/objective_forms/core_mse")
        .unwrap();
    assert!(forms["worst"].as_f64().unwrap() <= 1e-9);
}

#[test]
fn sign_flipped_generator_fails_the_nonnegativity_suite() {
    let flipped: RuleHandle = Arc::new(CustomRule::new(
        "flipped_mse",
        |q: &[f64]| 1.0 - q.iter().map(|v| v * v).sum::<f64>(),
        |q: &[f64], out: &mut [f64]| {
            for (o, v) in out.iter_mut().zip(q) {
                *o = -2.0 * v;
            }
        },
    ));
    let rules = [flipped, Arc::new(CoreLog) as RuleHandle];
    let report = verify(&rules, &VerifyOptions::sized(25, 1, 40, 0)).unwrap();
    assert!(!report.passed());
    let check = |name: &str| report.checks.iter().find(|c| c.name == name).unwrap();
    assert!(!check("nonnegativity/flipped_mse").passed);
    assert!(check("nonnegativity/flipped_mse").worst < -1e-3);
    assert!(check("nonnegativity/core_log").passed);
    assert!(check("nonnegativity/bald").passed);
}
