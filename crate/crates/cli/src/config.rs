//! Run configuration: TOML file plus `section.key=value` overrides.

use std::path::{Path, PathBuf};

use atbagging::active::ALConfig;
use atbagging::dataset::{load_csv, make_synthetic_transfer, TabularDataset};
use atbagging::selection::{SeedMethod, SelectionConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Csv {
        source: PathBuf,
        source_target: String,
        /// Defaults to the source file.
        transfer: Option<PathBuf>,
        /// Defaults to `source_target`.
        transfer_target: Option<String>,
    },
    Synthetic {
        #[serde(default = "default_n")]
        n_source: usize,
        #[serde(default = "default_n")]
        n_transfer: usize,
        #[serde(default = "default_dims")]
        dims: usize,
        #[serde(default = "default_correlation")]
        target_correlation: f64,
        #[serde(default)]
        shift: f64,
        /// Defaults to the run seed.
        #[serde(default)]
        seed: Option<u64>,
    },
}

fn default_n() -> usize {
    2000
}

fn default_dims() -> usize {
    2
}

fn default_correlation() -> f64 {
    0.9
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Synthetic {
            n_source: default_n(),
            n_transfer: default_n(),
            dims: default_dims(),
            target_correlation: default_correlation(),
            shift: 0.0,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Method every other method is compared against.
    pub reference: SeedMethod,
    pub band_mass: f64,
    pub interval_mass: f64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            reference: SeedMethod::Atbagging,
            band_mass: 0.9,
            interval_mass: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dataset_tag: String,
    pub replicates: usize,
    pub methods: Vec<SeedMethod>,
    /// Seed-set sizes; each overrides `active.n_seed`.
    pub n_seeds: Vec<usize>,
    pub data: DataConfig,
    pub selection: SelectionConfig,
    pub active: ALConfig,
    pub report: ReportConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: PathBuf::from("atbagging-out"),
            dataset_tag: "dataset".into(),
            replicates: 15,
            methods: SeedMethod::ALL.to_vec(),
            n_seeds: vec![10],
            data: DataConfig::default(),
            selection: SelectionConfig::default(),
            active: ALConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

/// Sets `dotted.key` in a TOML table. The value is parsed as TOML and kept as
/// a string when that fails.
fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{assignment}` is not key=value")))?;
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        table = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{part}` in `{key}` is not a section")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Reads `path` (or starts from defaults), applies overrides, and resolves
    /// relative data and output paths against the config file's directory.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        if let Some(toml::Value::Table(data)) = table.get_mut("data") {
            data.entry("kind").or_insert_with(|| "synthetic".into());
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        if let Some(base) = path.and_then(Path::parent) {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        if let DataConfig::Csv { source, transfer, .. } = &mut self.data {
            fix(source);
            if let Some(t) = transfer {
                fix(t);
            }
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    /// Checks everything that does not need the data.
    pub fn validate_static(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.methods.is_empty() {
            return bad("methods must not be empty".into());
        }
        if self.n_seeds.is_empty() {
            return bad("n_seeds must not be empty".into());
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        for (name, m) in [("band_mass", self.report.band_mass), ("interval_mass", self.report.interval_mass)] {
            if !(m > 0.0 && m < 1.0) {
                return bad(format!("report.{name} must lie in (0, 1)"));
            }
        }
        let d = &self.selection.atbagging.diversity;
        if d.rff_features == 0 || self.active.diversity.rff_features == 0 {
            return bad("rff_features must be at least 1".into());
        }
        if !(d.beta >= 0.0) || !(self.active.diversity.beta >= 0.0) {
            return bad("beta must be nonnegative".into());
        }
        if self.selection.atbagging.probe_cap == 0 {
            return bad("probe_cap must be at least 1".into());
        }
        for n_trees in [
            self.selection.atbagging.ensemble.n_trees,
            self.selection.coreset_ensemble.n_trees,
            self.active.ensemble.n_trees,
        ] {
            if n_trees == 0 {
                return bad("n_trees must be at least 1".into());
            }
        }
        if let DataConfig::Synthetic { dims, target_correlation, shift, .. } = self.data {
            if dims == 0 || !(0.0..=1.0).contains(&target_correlation) || !(shift >= 0.0) {
                return bad("synthetic data needs dims >= 1, target_correlation in [0, 1], shift >= 0".into());
            }
        }
        Ok(())
    }

    /// Loads (or generates) the source dataset and the transfer pool.
    pub fn load_data(&self) -> Result<(TabularDataset, TabularDataset), CliError> {
        let config_err = |e: atbagging::Error| CliError::Config(e.to_string());
        match &self.data {
            DataConfig::Csv {
                source,
                source_target,
                transfer,
                transfer_target,
            } => {
                let src = load_csv(source, None, source_target).map_err(config_err)?;
                let pool = match transfer {
                    Some(t) => load_csv(t, Some(src.schema()), transfer_target.as_deref().unwrap_or(source_target))
                        .map_err(config_err)?,
                    None => src.clone(),
                };
                pool.check_compatible(src.schema()).map_err(config_err)?;
                Ok((src.extend_schema(pool.schema()).map_err(config_err)?, pool))
            }
            DataConfig::Synthetic {
                n_source,
                n_transfer,
                dims,
                target_correlation,
                shift,
                seed,
            } => make_synthetic_transfer(
                *n_source,
                *n_transfer,
                *dims,
                *target_correlation,
                *shift,
                seed.unwrap_or(self.seed),
            )
            .map_err(config_err),
        }
    }

    /// Checks the configuration against the loaded data.
    pub fn validate_data(&self, source: &TabularDataset) -> Result<(), CliError> {
        if source.n_rows() < 2 {
            return Err(CliError::Config("source needs at least two rows".into()));
        }
        Ok(())
    }

    /// Seed sizes and acquisition budget against the loaded data.
    pub fn validate_experiment(&self, source: &TabularDataset, pool: &TabularDataset) -> Result<(), CliError> {
        for &k in &self.n_seeds {
            if k > source.n_rows() {
                return Err(CliError::Config(format!(
                    "n_seed {k} exceeds the {} source rows",
                    source.n_rows()
                )));
            }
            let mut al = self.active;
            al.n_seed = k;
            al.validate(pool.n_rows()).map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(())
    }
}
