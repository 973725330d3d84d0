use std::path::Path;
use std::process::Command;

use serde_json::{json, Value};

use sds_lab::experiment::{self, load_config, ExperimentConfig, Manifest, OUTPUT_DIR_ENV};
use sds_lab::sds::RunStatus;

fn small_config(out: &Path, name: &str) -> Value {
    json!({
        "name": name,
        "schedule": {"kind": "cosine", "T": 200},
        "mixture": "bimodal-far",
        "samplers": [
            {"kind": "uniform"},
            {"kind": "tp", "m": 100, "s": 25, "label": "tp"},
            {"kind": "linear"}
        ],
        "sds": {"lr": 0.02, "iterations": 150},
        "seeds": [0, 1, 2],
        "master_seed": 5,
        "theta0": {"kind": "jittered", "amplitude": 0.01},
        "output_dir": out,
        "tau": 0.2,
        "workers": 2
    })
}

fn write_config(dir: &Path, value: &Value) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sds-lab"))
}

#[test]
fn run_writes_every_listed_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let config = load_config(write_config(dir.path(), &small_config(dir.path(), "small"))).unwrap();
    let summary = experiment::run_experiment(&config).unwrap();
    let run_dir = dir.path().join("small");
    assert_eq!(summary.run_dir, run_dir);

    let manifest = Manifest::read(&run_dir).unwrap();
    assert_eq!(manifest.runs.len(), 9);
    assert_eq!(manifest.config_hash, config.hash());
    assert_eq!(manifest.workers, 2);
    assert!(manifest.divergent_runs.is_empty());
    for file in &manifest.files {
        assert!(run_dir.join(file).is_file(), "{file} listed but missing");
    }
    for run in &manifest.runs {
        assert!(manifest.files.contains(&run.file));
        assert_eq!(run.status, RunStatus::Completed);
        assert_eq!(run.completed_iterations, 150);
    }
    for label in ["uniform", "tp", "linear"] {
        let files = &manifest.reports[label];
        assert!(run_dir.join(&files.diversity).is_file());
        assert!(run_dir.join(&files.convergence).is_file());
    }
    assert!(run_dir.join("schedules/tp_weights.csv").is_file());
    assert!(run_dir.join("schedules/tp_timesteps.csv").is_file());
    assert!(run_dir.join("schedules/linear_timesteps.csv").is_file());
    assert!(!run_dir.join("schedules/uniform_timesteps.csv").exists());

    assert_eq!(experiment::report(&run_dir).unwrap(), summary.reports);
}

#[test]
fn divergent_runs_are_recorded_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let mut value = small_config(dir.path(), "blowup");
    value["sds"]["lr"] = json!(1e300);
    value["theta0"] = json!({"kind": "explicit", "values": [3.0, 0.5]});
    let config = ExperimentConfig::from_json_str(&value.to_string()).unwrap();
    let summary = experiment::run_experiment(&config).unwrap();
    let m = &summary.manifest;
    assert!(!m.divergent_runs.is_empty());
    for d in &m.divergent_runs {
        let run = m.runs.iter().find(|r| r.run_id == d.run_id).unwrap();
        assert!(matches!(run.status, RunStatus::Diverged { .. }));
        assert!(run.completed_iterations < 150);
    }
    let unconverged: usize = summary
        .reports
        .values()
        .map(|r| r.diversity.unconverged)
        .sum();
    assert!(unconverged >= m.divergent_runs.len());
    assert_eq!(
        experiment::report(&summary.run_dir).unwrap(),
        summary.reports
    );
}

#[test]
fn dry_run_validates_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &small_config(dir.path(), "dry"));
    let out = bin()
        .arg("run")
        .arg(&path)
        .arg("--dry-run")
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("uniform, tp, linear"));
    assert!(stdout.contains("9"));
    assert!(!dir.path().join("dry").exists());
}

#[test]
fn bad_config_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut value = small_config(dir.path(), "bad");
    value["samplers"][1]["s"] = json!(0);
    let path = write_config(dir.path(), &value);
    let out = bin().arg("run").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr)
        .unwrap()
        .contains("samplers[1].s"));

    let mut value = small_config(dir.path(), "bad");
    value["sds"]["itrations"] = json!(10);
    let path = write_config(dir.path(), &value);
    let out = bin().arg("run").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn env_override_and_single_seed() {
    let dir = tempfile::tempdir().unwrap();
    let elsewhere = dir.path().join("elsewhere");
    let path = write_config(dir.path(), &small_config(dir.path(), "envrun"));
    let out = bin()
        .arg("run")
        .arg(&path)
        .args(["--seed-override", "7", "--workers", "1"])
        .env(OUTPUT_DIR_ENV, &elsewhere)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(!dir.path().join("envrun").exists());
    let manifest = Manifest::read(&elsewhere.join("envrun")).unwrap();
    assert_eq!(manifest.runs.len(), 3);
    assert!(manifest.runs.iter().all(|r| r.seed == 7));
    assert_eq!(manifest.workers, 1);

    let out = bin()
        .arg("report")
        .arg(elsewhere.join("envrun"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().contains("tp"));
}

#[test]
fn export_schedule_command_writes_both_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "export-schedule",
            "--T",
            "100",
            "--m",
            "50",
            "--s",
            "12.5",
            "--N",
            "40",
            "--schedule",
            "cosine",
            "--out",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let timesteps = std::fs::read_to_string(dir.path().join("tp_timesteps.csv")).unwrap();
    assert_eq!(timesteps.lines().count(), 41);
    assert!(timesteps.starts_with("i,t\n"));
    let weights = std::fs::read_to_string(dir.path().join("tp_weights.csv")).unwrap();
    assert_eq!(weights.lines().count(), 101);

    let out = bin()
        .args(["export-schedule", "--s", "0", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn spectrum_command_reads_a_grid() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("grey.csv");
    let rows: Vec<String> = (0..8).map(|_| ["0.5"; 8].join(",")).collect();
    std::fs::write(&grid, rows.join("\n")).unwrap();
    let out = bin()
        .arg("spectrum")
        .arg(&grid)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout)
        .unwrap()
        .contains("low-frequency fraction 1.000000"));
    assert!(dir.path().join("grey_spectrum.csv").is_file());
    assert!(dir.path().join("grey_spectrum.json").is_file());

    std::fs::write(&grid, "1,2,3\n4,5\n").unwrap();
    let out = bin()
        .arg("spectrum")
        .arg(&grid)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
}
