use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::atomic::AtomicBool;

use atbagging::selection::SeedMethod;
use atbagging_cli::{cmd_experiment, cmd_report, cmd_score, cmd_select, CliError, DataConfig, RunConfig, INCOMPLETE_MARKER};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_atbagging"))
}

fn small(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig {
        output_dir: dir.to_path_buf(),
        replicates: 2,
        data: DataConfig::Synthetic {
            n_source: 150,
            n_transfer: 150,
            dims: 2,
            target_correlation: 0.9,
            shift: 0.0,
            seed: None,
        },
        ..RunConfig::default()
    };
    cfg.selection.atbagging.ensemble.n_trees = 20;
    cfg.selection.atbagging.diversity.rff_features = 64;
    cfg.selection.coreset_ensemble.n_trees = 20;
    cfg.active.ensemble.n_trees = 20;
    cfg.active.diversity.rff_features = 64;
    cfg.active.m_collect = 5;
    cfg.active.n_rounds = 3;
    cfg
}

fn csv_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(String::from)
        .collect()
}

fn write_source_csv(path: &Path) {
    let mut text = String::from("a,b,y\n");
    for i in 0..60 {
        let a = i as f64 * 0.1;
        let b = ["u", "v", "w"][i % 3];
        text.push_str(&format!("{a},{b},{}\n", a.sin() + if b == "u" { 1.0 } else { 0.0 }));
    }
    fs::write(path, text).unwrap();
}

#[test]
fn scores_cover_every_row_and_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let path = cmd_score(&cfg).unwrap();
    let first = fs::read(&path).unwrap();
    let rows = csv_rows(&path);
    assert_eq!(rows.len(), 150);
    assert!(rows.iter().all(|r| r.split(',').nth(1).unwrap().parse::<f64>().unwrap().is_finite()));
    assert!(String::from_utf8_lossy(&first).starts_with(&format!("# config_hash={}", cfg.hash())));
    cmd_score(&cfg).unwrap();
    assert_eq!(fs::read(&path).unwrap(), first);
}

#[test]
fn selections_have_k_rows_and_separate_streams() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let atb = csv_rows(&cmd_select(&cfg, SeedMethod::Atbagging, 10).unwrap());
    let rnd = csv_rows(&cmd_select(&cfg, SeedMethod::Random, 10).unwrap());
    assert_eq!(atb.len(), 10);
    let mut distinct = atb.clone();
    distinct.sort();
    distinct.dedup();
    assert_eq!(distinct.len(), 10);
    assert_ne!(atb, rnd);
    assert!(matches!(cmd_select(&cfg, SeedMethod::Random, 151), Err(CliError::Config(_))));
}

#[test]
fn missing_target_fails_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("src.csv");
    write_source_csv(&data);
    let out = dir.path().join("out");
    let status = bin()
        .args(["score", "--output-dir"])
        .arg(&out)
        .args(["--set", "data.kind=csv", "--set", "data.source_target=nope", "--set"])
        .arg(format!("data.source={}", data.display()))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn csv_data_with_categories_runs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("src.csv");
    write_source_csv(&data);
    let config = dir.path().join("run.toml");
    fs::write(
        &config,
        "[data]\nkind = \"csv\"\nsource = \"src.csv\"\nsource_target = \"y\"\n\
         [selection.atbagging.ensemble]\nn_trees = 20\n",
    )
    .unwrap();
    let out = bin()
        .arg("select")
        .arg("--config")
        .arg(&config)
        .args(["--method", "atbagging", "--k", "8", "--workers", "2"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let written = dir.path().join("atbagging-out/selection_atbagging.csv");
    assert_eq!(csv_rows(&written).len(), 8);
    let status = bin().arg("experiment").arg("--config").arg(&config).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn invalid_config_exit_code() {
    let status = bin().args(["experiment", "--set", "replicates=0"]).status().unwrap();
    assert_eq!(status.code(), Some(2));
    let status = bin().args(["experiment", "--set", "no_such_key=1"]).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn interrupted_run_is_marked() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let err = cmd_experiment(&cfg, &AtomicBool::new(true)).unwrap_err();
    assert_eq!(err.exit_code(), 4);
    assert!(dir.path().join(INCOMPLETE_MARKER).exists());
    let status = fs::read_to_string(dir.path().join("status.json")).unwrap();
    assert!(status.contains("\"incomplete\""));
}

#[test]
fn trial_table_counts_and_report_rebuild() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.replicates = 15;
    cfg.active.n_rounds = 14;
    cfg.data = DataConfig::Synthetic {
        n_source: 120,
        n_transfer: 120,
        dims: 2,
        target_correlation: 0.9,
        shift: 0.0,
        seed: None,
    };
    cmd_experiment(&cfg, &AtomicBool::new(false)).unwrap();
    assert!(!dir.path().join(INCOMPLETE_MARKER).exists());
    assert_eq!(csv_rows(&dir.path().join("trials.csv")).len(), 4 * 15 * 15);
    let summary = fs::read(dir.path().join("summary.json")).unwrap();
    fs::remove_file(dir.path().join("summary.json")).unwrap();
    cmd_report(dir.path()).unwrap();
    assert_eq!(fs::read(dir.path().join("summary.json")).unwrap(), summary);
    let text = String::from_utf8(summary).unwrap();
    assert!(text.contains(&cfg.hash()));
    assert!(text.contains("squared out-of-bag residual"));
}

#[test]
fn help_lists_subcommands() {
    let out = bin().arg("--help").output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["score", "select", "experiment", "report"] {
        assert!(text.contains(sub));
    }
}
