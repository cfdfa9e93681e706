//! Batch front end: scoring, seed selection, replicated active-learning
//! experiments and their reports.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use atbagging::active::{run_al_trial, write_curves_csv, LearningCurve};
use atbagging::rng;
use atbagging::selection::{score_source, select_seed, SeedMethod};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub mod config;
pub mod report;

pub use config::{DataConfig, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("interrupted")]
    Interrupted,
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Interrupted => 4,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<atbagging::Error> for CliError {
    fn from(e: atbagging::Error) -> Self {
        match e {
            atbagging::Error::Interrupted => CliError::Interrupted,
            e if e.is_numerical() => CliError::Numerical(e.to_string()),
            e => CliError::Runtime(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

/// Runs `f` on a pool of `workers` threads (rayon's default when `None`).
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        b = b.num_threads(w.max(1));
    }
    let pool = b.build().map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(pool.install(f))
}

/// Prefixes a CSV file with a `# config_hash=` comment line.
fn stamp_csv(path: &Path, hash: &str) -> Result<(), CliError> {
    let body = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    fs::write(path, format!("# config_hash={hash}\n{body}")).map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn prepare(
    cfg: &RunConfig,
    experiment: bool,
) -> Result<(atbagging::dataset::TabularDataset, atbagging::dataset::TabularDataset), CliError> {
    cfg.validate_static()?;
    let (source, pool) = cfg.load_data()?;
    cfg.validate_data(&source)?;
    if experiment {
        cfg.validate_experiment(&source, &pool)?;
    }
    fs::create_dir_all(&cfg.output_dir).map_err(|e| io_err(&cfg.output_dir, e))?;
    Ok((source, pool))
}

/// Information-gain score of every source row, written to `scores.csv`.
pub fn cmd_score(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let (source, pool) = prepare(cfg, false)?;
    let scores = score_source(&source, Some(&pool.without_target()), &cfg.selection.atbagging, cfg.seed)?;
    let path = cfg.output_dir.join("scores.csv");
    scores.write_csv(&path)?;
    stamp_csv(&path, &cfg.hash())?;
    Ok(path)
}

/// Selects `k` source rows and writes `selection_<method>.csv`.
pub fn cmd_select(cfg: &RunConfig, method: SeedMethod, k: usize) -> Result<PathBuf, CliError> {
    let (source, pool) = prepare(cfg, false)?;
    if k > source.n_rows() {
        return Err(CliError::Config(format!("k = {k} exceeds the {} source rows", source.n_rows())));
    }
    let sel = select_seed(method, &source, Some(&pool.without_target()), k, &cfg.selection, cfg.seed)?;
    let path = cfg.output_dir.join(format!("selection_{}.csv", method.name()));
    sel.write_csv(&path)?;
    stamp_csv(&path, &cfg.hash())?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Incomplete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusFile {
    pub config_hash: String,
    pub status: RunStatus,
    pub completed_trials: usize,
    pub expected_trials: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CurvesFile {
    config_hash: String,
    curves: Vec<LearningCurve>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ConfigFile {
    config_hash: String,
    config: RunConfig,
}

/// Marker left in the output directory of a run that did not finish.
pub const INCOMPLETE_MARKER: &str = "INCOMPLETE";

/// Every (n_seed, method, replicate) active-learning trial. Outputs land in
/// the configured directory; a run stopped through `interrupt` still writes
/// what it finished and is marked incomplete.
pub fn cmd_experiment(cfg: &RunConfig, interrupt: &AtomicBool) -> Result<PathBuf, CliError> {
    let (source, pool) = prepare(cfg, true)?;
    let dir = cfg.output_dir.clone();
    let hash = cfg.hash();
    let marker = dir.join(INCOMPLETE_MARKER);
    fs::write(&marker, "run in progress\n").map_err(|e| io_err(&marker, e))?;
    write_json(
        &dir.join("config.json"),
        &ConfigFile {
            config_hash: hash.clone(),
            config: cfg.clone(),
        },
    )?;

    let jobs: Vec<(usize, SeedMethod, u64)> = cfg
        .n_seeds
        .iter()
        .flat_map(|&k| {
            cfg.methods
                .iter()
                .flat_map(move |&m| (0..cfg.replicates as u64).map(move |t| (k, m, t)))
        })
        .collect();
    let results: Vec<Option<Result<LearningCurve, CliError>>> = jobs
        .par_iter()
        .map(|&(k, method, trial)| {
            if interrupt.load(Ordering::SeqCst) {
                return None;
            }
            let mut al = cfg.active;
            al.n_seed = k;
            let seed = rng::derive_seed(cfg.seed, trial);
            log::info!("trial {trial}: {method}, n_seed {k}");
            Some(run_al_trial(&source, &pool, method, &cfg.selection, &al, trial, seed).map_err(CliError::from))
        })
        .collect();
    let mut curves = Vec::with_capacity(jobs.len());
    for r in results.into_iter().flatten() {
        curves.push(r?);
    }
    let complete = curves.len() == jobs.len() && !interrupt.load(Ordering::SeqCst);

    write_json(
        &dir.join("curves.json"),
        &CurvesFile {
            config_hash: hash.clone(),
            curves: curves.clone(),
        },
    )?;
    let curves_csv = dir.join("curves.csv");
    write_curves_csv(&curves, &curves_csv)?;
    stamp_csv(&curves_csv, &hash)?;
    let summary = report::summarize(cfg, &curves);
    match summary {
        Ok((table, acc, summary)) => {
            let trials = dir.join("trials.csv");
            table.write_csv(&trials, Some(&acc))?;
            stamp_csv(&trials, &hash)?;
            write_json(&dir.join("summary.json"), &summary)?;
        }
        Err(e) if complete => return Err(e.into()),
        Err(e) => log::warn!("no summary for the partial run: {e}"),
    }
    write_json(
        &dir.join("status.json"),
        &StatusFile {
            config_hash: hash,
            status: if complete { RunStatus::Complete } else { RunStatus::Incomplete },
            completed_trials: curves.len(),
            expected_trials: jobs.len(),
        },
    )?;
    if !complete {
        fs::write(&marker, format!("{} of {} trials finished\n", curves.len(), jobs.len()))
            .map_err(|e| io_err(&marker, e))?;
        return Err(CliError::Interrupted);
    }
    fs::remove_file(&marker).map_err(|e| io_err(&marker, e))?;
    Ok(dir)
}

/// Rebuilds `summary.json` and `trials.csv` from a run directory's curves.
pub fn cmd_report(dir: &Path) -> Result<PathBuf, CliError> {
    let read = |name: &str| {
        let p = dir.join(name);
        fs::read_to_string(&p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
    };
    let cfg: ConfigFile =
        serde_json::from_str(&read("config.json")?).map_err(|e| CliError::Config(format!("config.json: {e}")))?;
    let curves: CurvesFile =
        serde_json::from_str(&read("curves.json")?).map_err(|e| CliError::Config(format!("curves.json: {e}")))?;
    if cfg.config_hash != curves.config_hash || cfg.config.hash() != cfg.config_hash {
        return Err(CliError::Config("config hash mismatch between run artifacts".into()));
    }
    let (table, acc, summary) = report::summarize(&cfg.config, &curves.curves)?;
    let trials = dir.join("trials.csv");
    table.write_csv(&trials, Some(&acc))?;
    stamp_csv(&trials, &cfg.config_hash)?;
    let out = dir.join("summary.json");
    write_json(&out, &summary)?;
    Ok(out)
}
