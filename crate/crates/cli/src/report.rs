//! Aggregation of learning curves into the experiment summary.

use std::collections::BTreeMap;

use atbagging::active::{Acquisition, LearningCurve};
use atbagging::infogain::NoisePolicy;
use atbagging::metrics::{
    self, hdi_band, mean_std, naulc_by_trial, pair_trials, pairwise_beta_binomial, sign_test_p, PairwiseComparison,
    TrialRecord, TrialTable,
};
use atbagging::rff::LengthscalePolicy;
use atbagging::selection::SeedMethod;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaulcSummary {
    pub method: String,
    pub n_seed: usize,
    pub trials: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub method: String,
    pub n_seed: usize,
    pub n_tr: usize,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseSummary {
    pub method: String,
    pub other: String,
    pub n_seed: usize,
    /// Trials where `method` had the higher NAULC, and the reverse.
    pub naulc_wins: usize,
    pub naulc_losses: usize,
    /// One-sided sign test that `method` has the higher NAULC.
    pub sign_test_p: f64,
    pub by_size: Vec<PairwiseComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub dataset: String,
    pub naulc: Vec<NaulcSummary>,
    pub bands: Vec<Band>,
    pub pairwise: Vec<PairwiseSummary>,
    /// Defaults and modelling choices this run relied on.
    pub assumptions: Vec<String>,
}

pub fn trial_table(cfg: &RunConfig, curves: &[LearningCurve]) -> atbagging::Result<TrialTable> {
    let mut t = TrialTable::new();
    for c in curves {
        for p in &c.points {
            t.push(TrialRecord {
                dataset: cfg.dataset_tag.clone(),
                method: c.method.clone(),
                n_seed: c.n_seed,
                trial: c.trial,
                n_tr: p.n_tr,
                r2: p.r2,
            })?;
        }
    }
    Ok(t)
}

pub fn assumptions(cfg: &RunConfig, curves: &[LearningCurve]) -> Vec<String> {
    let mut out = Vec::new();
    let atb = &cfg.selection.atbagging;
    if cfg.methods.contains(&SeedMethod::Atbagging) {
        out.push(match atb.noise {
            NoisePolicy::OobResidual => "noise variance: mean squared out-of-bag residual, floored at 1e-6 x target variance".into(),
            NoisePolicy::Fixed { value } => format!("noise variance: fixed at {value}"),
        });
        out.push(format!("probe set: at most {} transfer-pool rows", atb.probe_cap));
        out.push(format!(
            "diversity features: {} random Fourier features, quality exponent {}",
            atb.diversity.rff_features, atb.diversity.beta
        ));
        if atb.diversity.lengthscale == LengthscalePolicy::MedianHeuristic {
            out.push("lengthscale: median pairwise squared distance over at most 1000 rows".into());
        }
        out.push(format!(
            "subset sampler: up to {} attempts, then repair to size by quality",
            atb.diversity.sampler.max_attempts
        ));
    }
    if cfg.methods.contains(&SeedMethod::PcaGrid) {
        let g = cfg.selection.pca_grid;
        out.push(format!(
            "pca grid: {} components (None = min(5, width)), {} bins per axis",
            g.n_components.map_or("None".to_string(), |c| c.to_string()),
            g.bins_per_axis
        ));
    }
    if cfg.methods.contains(&SeedMethod::LossCoreset) {
        out.push("loss coreset: importance weight = squared out-of-bag residual".into());
    }
    let modes: BTreeMap<&str, Acquisition> = curves.iter().map(|c| (c.method.as_str(), c.acquisition)).collect();
    for (m, a) in modes {
        out.push(format!("acquisition for {m}: {}", match a {
            Acquisition::QbcTopk => "top-k committee disagreement",
            Acquisition::BlendedDpp => "disagreement-weighted DPP",
        }));
    }
    out.push("seed mapping: greedy nearest-neighbour matching into the acquirable pool, without replacement".into());
    out.push(format!(
        "evaluation split: {} of the transfer pool, fixed per replicate seed",
        cfg.active.eval_fraction
    ));
    out.push("accuracy normalization: r2 over the largest r2 of any trial on the dataset".into());
    out.push("pairwise comparisons: ties excluded, Jeffreys prior, equal-tailed interval".into());
    out
}

pub fn summarize(cfg: &RunConfig, curves: &[LearningCurve]) -> atbagging::Result<(TrialTable, Vec<f64>, Summary)> {
    let table = trial_table(cfg, curves)?;
    let acc = metrics::normalize_accuracy(&table)?;
    let per_trial = naulc_by_trial(&table, &acc)?;

    let mut groups: BTreeMap<(String, usize), Vec<(u64, f64)>> = BTreeMap::new();
    for ((_, method, n_seed, trial), v) in &per_trial {
        groups.entry((method.clone(), *n_seed)).or_default().push((*trial, *v));
    }
    let naulc = groups
        .iter()
        .map(|((method, n_seed), v)| {
            let values: Vec<f64> = v.iter().map(|x| x.1).collect();
            let (mean, std) = mean_std(&values);
            NaulcSummary {
                method: method.clone(),
                n_seed: *n_seed,
                trials: values.len(),
                mean,
                std,
            }
        })
        .collect();

    let mut by_size: BTreeMap<(String, usize, usize), Vec<f64>> = BTreeMap::new();
    let mut scored: BTreeMap<(String, usize), Vec<(u64, usize, f64)>> = BTreeMap::new();
    for (r, &a) in table.records().iter().zip(&acc) {
        by_size.entry((r.method.clone(), r.n_seed, r.n_tr)).or_default().push(a);
        scored.entry((r.method.clone(), r.n_seed)).or_default().push((r.trial, r.n_tr, a));
    }
    let mut bands = Vec::new();
    for ((method, n_seed, n_tr), v) in &by_size {
        if v.len() < 2 {
            continue;
        }
        let (lower, upper) = hdi_band(v, cfg.report.band_mass)?;
        bands.push(Band {
            method: method.clone(),
            n_seed: *n_seed,
            n_tr: *n_tr,
            mean: mean_std(v).0,
            lower,
            upper,
        });
    }

    let reference = cfg.report.reference.name().to_string();
    let mut pairwise = Vec::new();
    for (method, n_seed) in groups.keys() {
        if *method == reference {
            continue;
        }
        let (Some(a), Some(b)) = (scored.get(&(reference.clone(), *n_seed)), scored.get(&(method.clone(), *n_seed)))
        else {
            continue;
        };
        let sizes = pair_trials(a, b)
            .into_iter()
            .map(|(n_tr, pairs)| pairwise_beta_binomial(n_tr, &pairs, cfg.report.interval_mass))
            .collect::<atbagging::Result<Vec<_>>>()?;
        let ref_naulc: BTreeMap<u64, f64> = groups[&(reference.clone(), *n_seed)].iter().copied().collect();
        let (mut wins, mut losses) = (0, 0);
        for (trial, v) in &groups[&(method.clone(), *n_seed)] {
            if let Some(r) = ref_naulc.get(trial) {
                if r > v {
                    wins += 1;
                } else if r < v {
                    losses += 1;
                }
            }
        }
        pairwise.push(PairwiseSummary {
            method: reference.clone(),
            other: method.clone(),
            n_seed: *n_seed,
            naulc_wins: wins,
            naulc_losses: losses,
            sign_test_p: sign_test_p(wins, losses),
            by_size: sizes,
        });
    }

    let summary = Summary {
        config_hash: cfg.hash(),
        dataset: cfg.dataset_tag.clone(),
        naulc,
        bands,
        pairwise,
        assumptions: assumptions(cfg, curves),
    };
    Ok((table, acc, summary))
}
