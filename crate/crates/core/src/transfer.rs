//! Nearest-neighbour matching of selected source rows into a transfer pool.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{ColumnKind, TabularDataset};
use crate::{Error, Result};

/// Mismatch weight used when a pool has no numeric column to derive it from.
pub const DEFAULT_CATEGORICAL_GAMMA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistanceMetric {
    /// `whitener` is the inverse of the lower Cholesky factor of the
    /// ridge-regularized pool covariance.
    Mahalanobis { whitener: DMatrix<f64> },
    /// Squared Euclidean distance over numeric columns plus `gamma` per
    /// categorical mismatch.
    KPrototypes { gamma: f64 },
}

fn column_moments(pool: &TabularDataset, col: usize) -> (f64, f64) {
    let n = pool.n_rows() as f64;
    let mean = (0..pool.n_rows()).map(|i| pool.value(i, col)).sum::<f64>() / n;
    let var = (0..pool.n_rows())
        .map(|i| (pool.value(i, col) - mean).powi(2))
        .sum::<f64>()
        / n;
    (mean, var.sqrt())
}

/// Mahalanobis for all-numeric pools, k-prototypes otherwise. `categorical_gamma`
/// is only used when the pool has no numeric column.
pub fn fit_metric(pool: &TabularDataset, categorical_gamma: f64) -> Result<DistanceMetric> {
    if pool.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(categorical_gamma >= 0.0 && categorical_gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!("gamma {categorical_gamma} must be nonnegative")));
    }
    let numeric: Vec<usize> = (0..pool.n_cols()).filter(|&j| pool.schema()[j].is_numeric()).collect();
    if numeric.len() == pool.n_cols() {
        let d = pool.n_cols();
        let n = pool.n_rows();
        let x = DMatrix::from_row_slice(n, d, pool.values());
        let means: Vec<f64> = x.column_iter().map(|c| c.mean()).collect();
        let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - means[j]);
        let mut cov = centered.transpose() * &centered / n as f64;
        let ridge = match 1e-6 * cov.trace() / d as f64 {
            r if r > 0.0 => r,
            _ => 1e-6,
        };
        for j in 0..d {
            cov[(j, j)] += ridge;
        }
        let chol = cov.cholesky().ok_or(Error::NotPositiveDefinite)?;
        let whitener = chol
            .l()
            .solve_lower_triangular(&DMatrix::identity(d, d))
            .ok_or(Error::NotPositiveDefinite)?;
        return Ok(DistanceMetric::Mahalanobis { whitener });
    }
    let gamma = if numeric.is_empty() {
        categorical_gamma
    } else {
        0.5 * numeric.iter().map(|&j| column_moments(pool, j).1).sum::<f64>() / numeric.len() as f64
    };
    Ok(DistanceMetric::KPrototypes { gamma })
}

/// Distance between feature records laid out under the same schema (categorical
/// cells compared by code).
pub fn distance(metric: &DistanceMetric, kinds: &[ColumnKind], x: &[f64], y: &[f64]) -> f64 {
    match metric {
        DistanceMetric::Mahalanobis { whitener } => {
            let diff = DVector::from_iterator(x.len(), x.iter().zip(y).map(|(a, b)| a - b));
            (whitener * diff).norm()
        }
        DistanceMetric::KPrototypes { gamma } => kinds
            .iter()
            .zip(x.iter().zip(y))
            .map(|(k, (a, b))| match k {
                ColumnKind::Numeric => (a - b).powi(2),
                ColumnKind::Categorical if a == b => 0.0,
                ColumnKind::Categorical => *gamma,
            })
            .sum(),
    }
}

/// Re-expresses `source` categorical codes in the pool's code space. Labels
/// unknown to the pool become `-1`, which never matches.
fn align_codes(source: &TabularDataset, pool: &TabularDataset) -> Vec<Vec<f64>> {
    let remap: Vec<Option<Vec<f64>>> = source
        .schema()
        .iter()
        .zip(pool.schema())
        .map(|(s, p)| {
            (s.kind == ColumnKind::Categorical).then(|| {
                s.categories
                    .iter()
                    .map(|label| {
                        p.categories
                            .iter()
                            .position(|l| l == label)
                            .map_or(-1.0, |c| c as f64)
                    })
                    .collect()
            })
        })
        .collect();
    (0..source.n_rows())
        .map(|i| {
            source
                .features(i)
                .iter()
                .zip(&remap)
                .map(|(&v, r)| match r {
                    Some(codes) => codes[v as usize],
                    None => v,
                })
                .collect()
        })
        .collect()
}

/// Greedy matching in selection order: each source row takes its nearest
/// unmatched pool row, ties going to the lowest pool row id.
pub fn match_selection(source_points: &TabularDataset, pool: &TabularDataset, metric: &DistanceMetric) -> Result<Vec<u64>> {
    source_points.check_compatible(pool.schema())?;
    if source_points.n_rows() > pool.n_rows() {
        return Err(Error::NotEnoughPoints {
            k: source_points.n_rows(),
            available: pool.n_rows(),
        });
    }
    let kinds: Vec<ColumnKind> = pool.schema().iter().map(|c| c.kind).collect();
    let sources = align_codes(source_points, pool);
    let mut taken = vec![false; pool.n_rows()];
    let mut out = Vec::with_capacity(sources.len());
    for x in &sources {
        let mut best: Option<(f64, u64, usize)> = None;
        for p in 0..pool.n_rows() {
            if taken[p] {
                continue;
            }
            let dist = distance(metric, &kinds, x, pool.features(p));
            let id = pool.row_ids()[p];
            let better = match best {
                None => true,
                Some((bd, bid, _)) => dist < bd || (dist == bd && id < bid),
            };
            if better {
                best = Some((dist, id, p));
            }
        }
        let (_, id, p) = best.expect("pool has an unmatched row");
        taken[p] = true;
        out.push(id);
    }
    Ok(out)
}
