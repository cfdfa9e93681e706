//! Seed-subset selection front door: the information-gain + DPP pipeline and
//! dispatch to the comparison selectors.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{self, PcaGridConfig, SelectionResult};
use crate::dataset::{FeatureEncoder, TabularDataset};
use crate::dpp::{self, DualLEnsemble, SamplerConfig};
use crate::ensemble::{fit_ensemble, EnsembleConfig};
use crate::infogain::{self, CovarianceMode, InfoGainScores, NoisePolicy};
use crate::rff::{self, FeatureMap, LengthscalePolicy};
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedMethod {
    Atbagging,
    Random,
    PcaGrid,
    LossCoreset,
}

impl SeedMethod {
    pub const ALL: [SeedMethod; 4] = [
        SeedMethod::Atbagging,
        SeedMethod::Random,
        SeedMethod::PcaGrid,
        SeedMethod::LossCoreset,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SeedMethod::Atbagging => "atbagging",
            SeedMethod::Random => "random",
            SeedMethod::PcaGrid => "pca_grid",
            SeedMethod::LossCoreset => "loss_coreset",
        }
    }
}

impl fmt::Display for SeedMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SeedMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SeedMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method `{s}`")))
    }
}

/// Quality-diversity sampling knobs shared by seed selection and batch acquisition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiversityConfig {
    pub rff_features: usize,
    pub lengthscale: LengthscalePolicy,
    pub beta: f64,
    pub sampler: SamplerConfig,
}

impl Default for DiversityConfig {
    fn default() -> Self {
        DiversityConfig {
            rff_features: 512,
            lengthscale: LengthscalePolicy::MedianHeuristic,
            beta: 1.0,
            sampler: SamplerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AtbaggingConfig {
    pub ensemble: EnsembleConfig,
    pub noise: NoisePolicy,
    pub covariance: CovarianceMode,
    pub probe_cap: usize,
    pub diversity: DiversityConfig,
}

impl Default for AtbaggingConfig {
    fn default() -> Self {
        AtbaggingConfig {
            ensemble: EnsembleConfig::default(),
            noise: NoisePolicy::OobResidual,
            covariance: CovarianceMode::Full,
            probe_cap: 256,
            diversity: DiversityConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub atbagging: AtbaggingConfig,
    pub pca_grid: PcaGridConfig,
    /// Ensemble used to compute residuals for the loss coreset.
    pub coreset_ensemble: EnsembleConfig,
}

/// Outcome of one size-`k` draw from an L-ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DppDraw {
    pub indices: Vec<usize>,
    pub attempts: usize,
    /// `None` when no scaling was needed (exhaustive or rank-limited draws).
    pub scale: Option<f64>,
    pub fallback_used: bool,
    /// The kernel rank did not exceed `k`; every eigendirection was used and
    /// the result repaired to size.
    pub rank_limited: bool,
}

/// Size-`k` subset of the ensemble's points, covering the edge cases the
/// scaled sampler cannot: `k` equal to the point count and rank at most `k`.
pub fn dpp_select(le: &DualLEnsemble, k: usize, rng: &mut impl Rng, cfg: SamplerConfig) -> Result<DppDraw> {
    let n = le.n_points();
    if k > n {
        return Err(Error::NotEnoughPoints { k, available: n });
    }
    if k == n || k == 0 {
        return Ok(DppDraw {
            indices: (0..k).collect(),
            attempts: 0,
            scale: None,
            fallback_used: false,
            rank_limited: false,
        });
    }
    if le.rank() <= k {
        log::warn!("kernel rank {} does not exceed k = {k}; drawing at full rank and repairing", le.rank());
        let mut indices = dpp::sample_full_rank(le, rng);
        dpp::repair_to_size(&mut indices, le.qualities(), k);
        return Ok(DppDraw {
            indices,
            attempts: 1,
            scale: None,
            fallback_used: true,
            rank_limited: true,
        });
    }
    let s = dpp::sample_k(le, k, rng, cfg)?;
    Ok(DppDraw {
        indices: s.indices,
        attempts: s.attempts,
        scale: Some(s.scale),
        fallback_used: s.fallback_used,
        rank_limited: false,
    })
}

/// Random Fourier embedding of the encoded rows of `d`.
pub fn diversity_embedding(
    d: &TabularDataset,
    cfg: &DiversityConfig,
    seed: u64,
) -> Result<(DMatrix<f64>, FeatureMap)> {
    let x = FeatureEncoder::fit(d).encode(d)?;
    let map = rff::fit_feature_map(&x, cfg.rff_features, cfg.lengthscale, seed)?;
    Ok((map.embed(&x)?, map))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtbaggingOutcome {
    pub selection: SelectionResult,
    pub scores: InfoGainScores,
    pub lengthscale: f64,
    pub draw: DppDraw,
}

/// Information-gain scores of every source row. Probes come from
/// `probe_pool` when given, otherwise from the source itself.
pub fn score_source(
    source: &TabularDataset,
    probe_pool: Option<&TabularDataset>,
    cfg: &AtbaggingConfig,
    seed: u64,
) -> Result<InfoGainScores> {
    let e = fit_ensemble(source, &cfg.ensemble, rng::derive_named(seed, "atbagging/ensemble"))?;
    let noise = infogain::resolve_noise_var(&e, source, cfg.noise)?;
    let probes = infogain::choose_probe_set(
        probe_pool.unwrap_or(source),
        cfg.probe_cap,
        rng::derive_named(seed, "atbagging/probes"),
    )?;
    infogain::score_all(&e, source, &probes, noise, cfg.covariance)
}

pub fn select_atbagging(
    source: &TabularDataset,
    probe_pool: Option<&TabularDataset>,
    k: usize,
    cfg: &AtbaggingConfig,
    seed: u64,
) -> Result<AtbaggingOutcome> {
    if k > source.n_rows() {
        return Err(Error::NotEnoughPoints {
            k,
            available: source.n_rows(),
        });
    }
    let scores = score_source(source, probe_pool, cfg, seed)?;
    let (phi, map) = diversity_embedding(source, &cfg.diversity, rng::derive_named(seed, "atbagging/rff"))?;
    let le = dpp::build_l_ensemble(&phi, &scores.ig, cfg.diversity.beta)?.with_ids(source.row_ids().to_vec())?;
    let mut rng = rng::named_rng(seed, "atbagging/dpp");
    let draw = dpp_select(&le, k, &mut rng, cfg.diversity.sampler)?;
    let row_ids = draw.indices.iter().map(|&i| le.ids()[i]).collect();
    Ok(AtbaggingOutcome {
        selection: SelectionResult {
            row_ids,
            method: SeedMethod::Atbagging.name().into(),
            config: serde_json::json!({
                "seed": seed,
                "config": cfg,
                "lengthscale": map.lengthscale(),
                "noise_var": scores.noise_var,
                "dpp_attempts": draw.attempts,
                "dpp_fallback": draw.fallback_used,
                "rank_limited": draw.rank_limited,
            }),
        },
        lengthscale: map.lengthscale(),
        scores,
        draw,
    })
}

/// Selects `k` source rows with the given method. Every method draws from its
/// own named random stream.
pub fn select_seed(
    method: SeedMethod,
    source: &TabularDataset,
    probe_pool: Option<&TabularDataset>,
    k: usize,
    cfg: &SelectionConfig,
    seed: u64,
) -> Result<SelectionResult> {
    match method {
        SeedMethod::Atbagging => Ok(select_atbagging(source, probe_pool, k, &cfg.atbagging, seed)?.selection),
        SeedMethod::Random => baselines::select_random(source, k, seed),
        SeedMethod::PcaGrid => baselines::select_pca_grid(source, k, cfg.pca_grid, seed),
        SeedMethod::LossCoreset => {
            if k > source.n_rows() {
                return Err(Error::NotEnoughPoints {
                    k,
                    available: source.n_rows(),
                });
            }
            let e = fit_ensemble(source, &cfg.coreset_ensemble, rng::derive_named(seed, "loss-coreset/ensemble"))?;
            baselines::select_loss_coreset(source, &e, k, seed)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::make_synthetic_transfer;

    fn small_cfg() -> SelectionConfig {
        let mut cfg = SelectionConfig::default();
        cfg.atbagging.ensemble.n_trees = 30;
        cfg.atbagging.diversity.rff_features = 64;
        cfg.coreset_ensemble.n_trees = 30;
        cfg
    }

    fn distinct(ids: &[u64]) -> bool {
        let mut v = ids.to_vec();
        v.sort_unstable();
        v.dedup();
        v.len() == ids.len()
    }

    #[test]
    fn every_method_honours_the_contract() {
        let (src, pool) = make_synthetic_transfer(120, 80, 3, 0.9, 0.0, 1).unwrap();
        let cfg = small_cfg();
        for m in SeedMethod::ALL {
            let a = select_seed(m, &src, Some(&pool.without_target()), 10, &cfg, 5).unwrap();
            let b = select_seed(m, &src, Some(&pool.without_target()), 10, &cfg, 5).unwrap();
            assert_eq!(a, b, "{m}");
            assert_eq!(a.row_ids.len(), 10);
            assert!(distinct(&a.row_ids));
            assert!(a.row_ids.iter().all(|id| src.position_of(*id).is_some()));
            assert_eq!(a.method, m.name());
        }
    }

    #[test]
    fn streams_are_separate() {
        let (src, _) = make_synthetic_transfer(200, 0, 2, 1.0, 0.0, 2).unwrap();
        let cfg = small_cfg();
        let a = select_seed(SeedMethod::Atbagging, &src, None, 10, &cfg, 3).unwrap();
        let r = select_seed(SeedMethod::Random, &src, None, 10, &cfg, 3).unwrap();
        assert_ne!(a.row_ids, r.row_ids);
    }

    #[test]
    fn oversized_request_rejected() {
        let (src, _) = make_synthetic_transfer(20, 0, 2, 1.0, 0.0, 2).unwrap();
        for m in SeedMethod::ALL {
            assert!(matches!(
                select_seed(m, &src, None, 21, &small_cfg(), 0),
                Err(Error::NotEnoughPoints { .. })
            ));
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in SeedMethod::ALL {
            assert_eq!(m.name().parse::<SeedMethod>().unwrap(), m);
        }
        assert!("nope".parse::<SeedMethod>().is_err());
    }

    #[test]
    fn low_rank_kernel_still_gives_k_points() {
        let phi = DMatrix::from_fn(12, 2, |i, j| ((i + j) as f64).sin());
        let le = dpp::build_l_ensemble(&phi, &[1.0; 12], 1.0).unwrap();
        let mut r = rng::rng_from_seed(0);
        let d = dpp_select(&le, 5, &mut r, SamplerConfig::default()).unwrap();
        assert!(d.rank_limited);
        assert_eq!(d.indices.len(), 5);
        let all = dpp_select(&le, 12, &mut r, SamplerConfig::default()).unwrap();
        assert_eq!(all.indices, (0..12).collect::<Vec<_>>());
    }
}
