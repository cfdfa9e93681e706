//! Comparison seed selectors: uniform random, PCA voxel grid and a
//! loss-driven importance-sampling coreset.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureEncoder, TabularDataset};
use crate::ensemble::BaggedEnsemble;
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub row_ids: Vec<u64>,
    pub method: String,
    pub config: serde_json::Value,
}

impl SelectionResult {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["row_id"])?;
        for id in &self.row_ids {
            w.write_record([id.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k > n {
        return Err(Error::NotEnoughPoints { k, available: n });
    }
    Ok(())
}

pub fn select_random(d: &TabularDataset, k: usize, seed: u64) -> Result<SelectionResult> {
    check_k(k, d.n_rows())?;
    let mut rng = rng::named_rng(seed, "random");
    let row_ids = index::sample(&mut rng, d.n_rows(), k)
        .into_iter()
        .map(|p| d.row_ids()[p])
        .collect();
    Ok(SelectionResult {
        row_ids,
        method: "random".into(),
        config: serde_json::json!({ "seed": seed }),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PcaGridConfig {
    /// `None` means `min(5, encoded width)`.
    pub n_components: Option<usize>,
    pub bins_per_axis: usize,
}

impl Default for PcaGridConfig {
    fn default() -> Self {
        PcaGridConfig {
            n_components: None,
            bins_per_axis: 4,
        }
    }
}

/// Top principal-component scores of the standardized, one-hot encoded data.
pub fn pca_scores(d: &TabularDataset, n_components: usize) -> Result<DMatrix<f64>> {
    let x = FeatureEncoder::fit(d).encode(d)?;
    let n = x.nrows().max(1) as f64;
    let mut centered = x.clone();
    for mut col in centered.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
    }
    let cov = centered.transpose() * &centered / n;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let c = n_components.min(order.len());
    let axes = DMatrix::from_fn(x.ncols(), c, |r, j| eig.eigenvectors[(r, order[j])]);
    Ok(centered * axes)
}

/// Voxel key of every row: each score axis cut into `bins` equal-width bins
/// spanning its observed range.
fn voxelize(scores: &DMatrix<f64>, bins: usize) -> Vec<Vec<usize>> {
    let ranges: Vec<(f64, f64)> = scores
        .column_iter()
        .map(|c| (c.min(), c.max()))
        .collect();
    (0..scores.nrows())
        .map(|i| {
            ranges
                .iter()
                .enumerate()
                .map(|(j, &(lo, hi))| {
                    let width = hi - lo;
                    if width <= 0.0 {
                        return 0;
                    }
                    let b = ((scores[(i, j)] - lo) / width * bins as f64).floor() as usize;
                    b.min(bins - 1)
                })
                .collect()
        })
        .collect()
}

/// Ids chosen by the grid sampler and, per pick, the voxel it came from.
pub(crate) fn pca_grid_trace(
    d: &TabularDataset,
    k: usize,
    cfg: PcaGridConfig,
    seed: u64,
) -> Result<(Vec<u64>, Vec<usize>)> {
    check_k(k, d.n_rows())?;
    if cfg.bins_per_axis == 0 {
        return Err(Error::InvalidArgument("bins_per_axis must be at least 1".into()));
    }
    if k == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    let width = FeatureEncoder::fit(d).width();
    let n_components = cfg.n_components.unwrap_or(5).min(width).max(1);
    let scores = pca_scores(d, n_components)?;
    let mut voxels: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
    for (i, key) in voxelize(&scores, cfg.bins_per_axis).into_iter().enumerate() {
        voxels.entry(key).or_default().push(i);
    }
    let mut rng = rng::named_rng(seed, "pca-grid");
    let mut members: Vec<Vec<usize>> = voxels.into_values().collect();
    members.shuffle(&mut rng);
    let mut ids = Vec::with_capacity(k);
    let mut trace = Vec::with_capacity(k);
    while ids.len() < k {
        for (v, pool) in members.iter_mut().enumerate() {
            if ids.len() == k {
                break;
            }
            if pool.is_empty() {
                continue;
            }
            let at = rng.random_range(0..pool.len());
            let p = pool.swap_remove(at);
            ids.push(d.row_ids()[p]);
            trace.push(v);
        }
    }
    Ok((ids, trace))
}

pub fn select_pca_grid(d: &TabularDataset, k: usize, cfg: PcaGridConfig, seed: u64) -> Result<SelectionResult> {
    let (row_ids, _) = pca_grid_trace(d, k, cfg, seed)?;
    Ok(SelectionResult {
        row_ids,
        method: "pca_grid".into(),
        config: serde_json::json!({
            "seed": seed,
            "n_components": cfg.n_components,
            "bins_per_axis": cfg.bins_per_axis,
        }),
    })
}

/// Sequential weighted draws without replacement. Once no positive weight
/// remains, the rest is drawn uniformly. Returns positions.
pub fn weighted_sample_without_replacement(weights: &[f64], k: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    check_k(k, weights.len())?;
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
    }
    let mut remaining: Vec<usize> = (0..weights.len()).collect();
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        let total: f64 = remaining.iter().map(|&i| weights[i]).sum();
        let at = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut at = None;
            for (j, &i) in remaining.iter().enumerate() {
                if weights[i] <= 0.0 {
                    continue;
                }
                at = Some(j);
                if u < weights[i] {
                    break;
                }
                u -= weights[i];
            }
            at.expect("positive total has a positive entry")
        } else {
            rng.random_range(0..remaining.len())
        };
        out.push(remaining.remove(at));
    }
    Ok(out)
}

/// Importance sampling with weights equal to each row's squared out-of-bag
/// residual. Rows without an out-of-bag prediction get weight zero.
pub fn select_loss_coreset(d: &TabularDataset, e: &BaggedEnsemble, k: usize, seed: u64) -> Result<SelectionResult> {
    check_k(k, d.n_rows())?;
    let y = d.require_target()?;
    let weights: Vec<f64> = e
        .oob_predictions(d)?
        .iter()
        .zip(y)
        .map(|(p, y)| p.map_or(0.0, |p| (p - y).powi(2)))
        .collect();
    if weights.iter().all(|w| *w == 0.0) {
        log::warn!("all loss-coreset weights are zero; sampling uniformly");
    }
    let mut rng = rng::named_rng(seed, "loss-coreset");
    let picks = weighted_sample_without_replacement(&weights, k, &mut rng)?;
    Ok(SelectionResult {
        row_ids: picks.into_iter().map(|p| d.row_ids()[p]).collect(),
        method: "loss_coreset".into(),
        config: serde_json::json!({
            "seed": seed,
            "weight": "squared out-of-bag residual",
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_synthetic_transfer, ColumnSchema};
    use std::collections::HashSet;

    fn line(n: usize) -> TabularDataset {
        TabularDataset::new(
            vec![ColumnSchema::numeric("x")],
            (0..n).map(|i| i as f64).collect(),
            Some((0..n).map(|i| (i as f64).sin()).collect()),
            None,
        )
        .unwrap()
    }

    fn distinct(ids: &[u64]) -> bool {
        ids.iter().collect::<HashSet<_>>().len() == ids.len()
    }

    #[test]
    fn random_edge_sizes() {
        let d = line(7);
        let mut all = select_random(&d, 7, 1).unwrap().row_ids;
        all.sort_unstable();
        assert_eq!(all, (0..7).collect::<Vec<_>>());
        assert!(select_random(&d, 0, 1).unwrap().row_ids.is_empty());
        assert!(matches!(select_random(&d, 8, 1), Err(Error::NotEnoughPoints { .. })));
    }

    #[test]
    fn random_inclusion_frequency() {
        let d = line(10);
        let draws = 10_000;
        let mut counts = [0usize; 10];
        for s in 0..draws {
            for id in select_random(&d, 3, s).unwrap().row_ids {
                counts[id as usize] += 1;
            }
        }
        let sd = (0.3f64 * 0.7 / draws as f64).sqrt();
        for c in counts {
            assert!((c as f64 / draws as f64 - 0.3).abs() < 3.0 * sd);
        }
    }

    #[test]
    fn selectors_are_deterministic_and_distinct() {
        let (d, _) = make_synthetic_transfer(200, 0, 3, 1.0, 0.0, 2).unwrap();
        let e = crate::ensemble::fit_ensemble(&d, &Default::default(), 3).unwrap();
        for k in [1, 10, 57] {
            let r = select_random(&d, k, 5).unwrap();
            let g = select_pca_grid(&d, k, PcaGridConfig::default(), 5).unwrap();
            let c = select_loss_coreset(&d, &e, k, 5).unwrap();
            for s in [&r, &g, &c] {
                assert_eq!(s.row_ids.len(), k);
                assert!(distinct(&s.row_ids));
            }
            assert_eq!(g, select_pca_grid(&d, k, PcaGridConfig::default(), 5).unwrap());
            assert_eq!(c, select_loss_coreset(&d, &e, k, 5).unwrap());
        }
    }

    #[test]
    fn single_voxel_behaves_like_random() {
        // One bin per axis puts everything in one voxel: uniform inclusion.
        let d = line(10);
        let cfg = PcaGridConfig {
            n_components: Some(1),
            bins_per_axis: 1,
        };
        let draws = 10_000;
        let mut counts = [0usize; 10];
        for s in 0..draws {
            for id in select_pca_grid(&d, 3, cfg, s).unwrap().row_ids {
                counts[id as usize] += 1;
            }
        }
        let sd = (0.3f64 * 0.7 / draws as f64).sqrt();
        for c in counts {
            assert!((c as f64 / draws as f64 - 0.3).abs() < 3.0 * sd);
        }
    }

    #[test]
    fn two_far_clusters_each_contribute_one() {
        let mut xs: Vec<f64> = (0..20).map(|i| i as f64 * 0.01).collect();
        xs.extend((0..20).map(|i| 100.0 + i as f64 * 0.01));
        let d = TabularDataset::new(vec![ColumnSchema::numeric("x")], xs, None, None).unwrap();
        for s in 0..200 {
            let ids = select_pca_grid(&d, 2, PcaGridConfig::default(), s).unwrap().row_ids;
            let low = ids.iter().filter(|&&id| id < 20).count();
            assert_eq!(low, 1, "seed {s}: {ids:?}");
        }
    }

    #[test]
    fn grid_round_robin_is_fair() {
        let (d, _) = make_synthetic_transfer(300, 0, 3, 1.0, 0.0, 4).unwrap();
        let cfg = PcaGridConfig::default();
        let (all, full) = pca_grid_trace(&d, 300, cfg, 9).unwrap();
        assert!(distinct(&all));
        let n_vox = full.iter().max().unwrap() + 1;
        let mut sizes = vec![0usize; n_vox];
        for &v in &full {
            sizes[v] += 1;
        }
        // Pass p visits, in order, exactly the voxels holding more than p points.
        let (_, trace) = pca_grid_trace(&d, 150, cfg, 9).unwrap();
        let mut expected = Vec::new();
        for pass in 0.. {
            if expected.len() >= trace.len() {
                break;
            }
            expected.extend((0..n_vox).filter(|&v| sizes[v] > pass));
        }
        expected.truncate(trace.len());
        assert_eq!(trace, expected);
    }

    #[test]
    fn degenerate_weights() {
        let mut r = rng::rng_from_seed(1);
        for _ in 0..100 {
            assert_eq!(
                weighted_sample_without_replacement(&[0.0, 1.0, 0.0], 1, &mut r).unwrap(),
                vec![1]
            );
        }
        let picks = weighted_sample_without_replacement(&[0.0, 1.0, 0.0], 3, &mut r).unwrap();
        assert_eq!(picks.len(), 3);
        assert_eq!(picks[0], 1);
    }

    #[test]
    fn weighted_pick_frequencies() {
        let mut r = rng::rng_from_seed(2);
        let draws = 10_000;
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            counts[weighted_sample_without_replacement(&[3.0, 1.0, 0.0, 0.0], 1, &mut r).unwrap()[0]] += 1;
        }
        for (c, p) in counts.iter().zip([0.75, 0.25, 0.0, 0.0]) {
            let sd = (p * (1.0 - p) / draws as f64).sqrt();
            assert!((*c as f64 / draws as f64 - p).abs() <= 3.0 * sd);
        }
    }

    // Uniform weights against uniform random 3-subsets of 8: chi-square over the 56 subsets.
    #[test]
    fn uniform_weights_match_random_subsets() {
        let mut r = rng::rng_from_seed(3);
        let draws = 10_000;
        let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
        for _ in 0..draws {
            let mut s = weighted_sample_without_replacement(&[1.0; 8], 3, &mut r).unwrap();
            s.sort_unstable();
            *counts.entry(s).or_default() += 1;
        }
        assert_eq!(counts.len(), 56);
        let expected = draws as f64 / 56.0;
        let chi2: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 99.9% quantile of chi-square with 55 degrees of freedom.
        assert!(chi2 < 93.17, "{chi2}");
    }

    #[test]
    fn loss_coreset_zero_weights_fall_back_to_uniform() {
        let d = line(12).with_target(vec![1.0; 12]).unwrap();
        let e = crate::ensemble::fit_ensemble(&d, &Default::default(), 0).unwrap();
        let s = select_loss_coreset(&d, &e, 5, 1).unwrap();
        assert_eq!(s.row_ids.len(), 5);
        assert!(distinct(&s.row_ids));
    }

    #[test]
    fn selection_csv() {
        let s = SelectionResult {
            row_ids: vec![3, 1],
            method: "random".into(),
            config: serde_json::Value::Null,
        };
        let f = tempfile::NamedTempFile::new().unwrap();
        s.write_csv(f.path()).unwrap();
        assert_eq!(std::fs::read_to_string(f.path()).unwrap(), "row_id\n3\n1\n");
    }
}
