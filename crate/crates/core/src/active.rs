//! Pool-based active-learning simulation seeded by a selected subset.

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::TabularDataset;
use crate::dpp;
use crate::ensemble::{fit_ensemble, BaggedEnsemble, EnsembleConfig};
use crate::rng;
use crate::selection::{self, DiversityConfig, SeedMethod, SelectionConfig};
use crate::transfer;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Acquisition {
    QbcTopk,
    BlendedDpp,
}

impl Acquisition {
    /// Blended acquisition for the information-gain seed method, top-k
    /// disagreement for the comparison methods.
    pub fn default_for(method: SeedMethod) -> Acquisition {
        match method {
            SeedMethod::Atbagging => Acquisition::BlendedDpp,
            _ => Acquisition::QbcTopk,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ALConfig {
    pub n_seed: usize,
    pub m_collect: usize,
    pub n_rounds: usize,
    /// `None` picks [`Acquisition::default_for`] the seed method.
    pub acquisition: Option<Acquisition>,
    pub ensemble: EnsembleConfig,
    pub diversity: DiversityConfig,
    /// Fraction of the transfer pool held out for evaluation.
    pub eval_fraction: f64,
    /// Mismatch weight for all-categorical pools.
    pub categorical_gamma: f64,
}

impl Default for ALConfig {
    fn default() -> Self {
        ALConfig {
            n_seed: 10,
            m_collect: 20,
            n_rounds: 14,
            acquisition: None,
            ensemble: EnsembleConfig::default(),
            diversity: DiversityConfig::default(),
            eval_fraction: 0.2,
            categorical_gamma: transfer::DEFAULT_CATEGORICAL_GAMMA,
        }
    }
}

impl ALConfig {
    pub fn eval_size(&self, pool_size: usize) -> usize {
        (self.eval_fraction * pool_size as f64).round() as usize
    }

    pub fn final_size(&self) -> usize {
        self.n_seed + self.n_rounds * self.m_collect
    }

    /// Checks the configuration against a transfer pool of `pool_size` rows.
    pub fn validate(&self, pool_size: usize) -> Result<()> {
        if self.n_seed < 2 {
            return Err(Error::InvalidArgument("n_seed must be at least 2".into()));
        }
        if self.m_collect == 0 {
            return Err(Error::InvalidArgument("m_collect must be at least 1".into()));
        }
        if !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            return Err(Error::InvalidArgument("eval_fraction must lie in (0, 1)".into()));
        }
        let eval = self.eval_size(pool_size);
        if eval < 2 {
            return Err(Error::InvalidArgument("evaluation split needs at least two rows".into()));
        }
        let acquirable = pool_size - eval;
        if self.final_size() > acquirable {
            return Err(Error::InvalidArgument(format!(
                "n_seed + n_rounds * m_collect = {} exceeds the {acquirable} acquirable pool rows",
                self.final_size()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n_tr: usize,
    pub r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub method: String,
    pub trial: u64,
    pub n_seed: usize,
    pub acquisition: Acquisition,
    pub points: Vec<CurvePoint>,
    /// Labeled pool ids in acquisition order.
    pub labeled: Vec<u64>,
}

/// CSV with columns `trial,method,n_tr,r2`.
pub fn write_curves_csv(curves: &[LearningCurve], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["trial", "method", "n_tr", "r2"])?;
    for c in curves {
        for p in &c.points {
            w.write_record([
                c.trial.to_string(),
                c.method.clone(),
                p.n_tr.to_string(),
                format!("{:?}", p.r2),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_curves_json(curves: &[LearningCurve], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), curves)?;
    Ok(())
}

/// Population variance of the tree predictions at every pool row.
pub fn committee_disagreement(e: &BaggedEnsemble, pool: &TabularDataset) -> Result<Vec<f64>> {
    let p = e.predict_matrix(pool)?;
    let m = p.nrows() as f64;
    Ok(p.column_iter()
        .map(|c| {
            let mean = c.sum() / m;
            (c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m).max(0.0)
        })
        .collect())
}

/// Positions of the `m` highest scores, ties to the lowest id.
fn top_k(scores: &[f64], ids: &[u64], m: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(ids[a].cmp(&ids[b])));
    order.truncate(m);
    order
}

/// Picks `m` rows of `pool` to label next. `phi` holds the diversity
/// embedding of the pool rows (only read in blended mode).
pub fn acquire_batch(
    e: &BaggedEnsemble,
    pool: &TabularDataset,
    phi: &DMatrix<f64>,
    m: usize,
    mode: Acquisition,
    diversity: &DiversityConfig,
    rng: &mut impl Rng,
) -> Result<Vec<u64>> {
    let n = pool.n_rows();
    if m > n {
        return Err(Error::NotEnoughPoints { k: m, available: n });
    }
    if m == n {
        return Ok(pool.row_ids().to_vec());
    }
    let scores = committee_disagreement(e, pool)?;
    let positions = match mode {
        Acquisition::QbcTopk => top_k(&scores, pool.row_ids(), m),
        Acquisition::BlendedDpp => {
            if phi.nrows() != n {
                return Err(Error::InvalidArgument(format!(
                    "embedding has {} rows for {n} pool rows",
                    phi.nrows()
                )));
            }
            let (qualities, beta) = if scores.iter().any(|s| *s > 0.0) {
                (scores, diversity.beta)
            } else {
                log::warn!("committee agrees on every pool row; acquiring by diversity alone");
                (vec![1.0; n], 0.0)
            };
            let le = dpp::build_l_ensemble(phi, &qualities, beta)?;
            selection::dpp_select(&le, m, rng, diversity.sampler)?.indices
        }
    };
    Ok(positions.into_iter().map(|p| pool.row_ids()[p]).collect())
}

/// `1 - SSE / SST`.
pub fn r_squared(y: &[f64], pred: &[f64]) -> Result<f64> {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if !(sst > 0.0) {
        return Err(Error::InvalidArgument("evaluation targets are constant".into()));
    }
    let sse: f64 = y.iter().zip(pred).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(1.0 - sse / sst)
}

/// Splits pool positions into (acquirable, evaluation). Depends only on the
/// trial seed, so every method sees the same split in a given trial.
pub fn evaluation_split(pool_size: usize, cfg: &ALConfig, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..pool_size).collect();
    order.shuffle(&mut rng::named_rng(seed, "eval-split"));
    let mut eval = order.split_off(pool_size - cfg.eval_size(pool_size));
    order.sort_unstable();
    eval.sort_unstable();
    (order, eval)
}

/// One replicate: select on the source, match into the transfer pool, then
/// alternate fitting, scoring on the held-out split and acquiring.
pub fn run_al_trial(
    source: &TabularDataset,
    transfer_pool: &TabularDataset,
    method: SeedMethod,
    selection_cfg: &SelectionConfig,
    cfg: &ALConfig,
    trial: u64,
    seed: u64,
) -> Result<LearningCurve> {
    transfer_pool.require_target()?;
    cfg.validate(transfer_pool.n_rows())?;
    let (acq_pos, eval_pos) = evaluation_split(transfer_pool.n_rows(), cfg, seed);
    let acquirable = transfer_pool.subset(&acq_pos);
    let eval = transfer_pool.subset(&eval_pos);
    let eval_x = eval.without_target();
    let eval_y = eval.require_target()?;
    let hidden = acquirable.without_target();

    let chosen = selection::select_seed(
        method,
        source,
        Some(&hidden),
        cfg.n_seed,
        selection_cfg,
        rng::derive_named(seed, "seed-selection"),
    )?;
    let metric = transfer::fit_metric(&hidden, cfg.categorical_gamma)?;
    let picked = source.select_ids(&chosen.row_ids)?.without_target();
    let mut labeled = transfer::match_selection(&picked, &hidden, &metric)?;

    let acquisition = cfg.acquisition.unwrap_or(Acquisition::default_for(method));
    let phi = match acquisition {
        Acquisition::BlendedDpp => selection::diversity_embedding(&hidden, &cfg.diversity, rng::derive_named(seed, "al-rff"))?.0,
        Acquisition::QbcTopk => DMatrix::zeros(0, 0),
    };
    let mut is_labeled = vec![false; acquirable.n_rows()];
    for id in &labeled {
        is_labeled[acquirable.position_of(*id).expect("matched id")] = true;
    }
    let fit_seed = rng::derive_named(seed, "al-ensemble");
    let mut acq_rng = rng::named_rng(seed, "acquisition");
    let mut points = Vec::with_capacity(cfg.n_rounds + 1);
    for round in 0..=cfg.n_rounds {
        let train = acquirable.select_ids(&labeled)?;
        let e = fit_ensemble(&train, &cfg.ensemble, rng::derive_seed(fit_seed, round as u64))?;
        let r2 = r_squared(eval_y, &e.predict_mean(&eval_x)?)?;
        points.push(CurvePoint { n_tr: labeled.len(), r2 });
        if round == cfg.n_rounds {
            break;
        }
        let open: Vec<usize> = (0..acquirable.n_rows()).filter(|&p| !is_labeled[p]).collect();
        let pool = hidden.subset(&open);
        let pool_phi = if phi.nrows() > 0 { phi.select_rows(&open) } else { phi.clone() };
        let batch = acquire_batch(&e, &pool, &pool_phi, cfg.m_collect, acquisition, &cfg.diversity, &mut acq_rng)?;
        for id in batch {
            is_labeled[acquirable.position_of(id).expect("pool id")] = true;
            labeled.push(id);
        }
    }
    Ok(LearningCurve {
        method: method.name().into(),
        trial,
        n_seed: cfg.n_seed,
        acquisition,
        points,
        labeled,
    })
}
