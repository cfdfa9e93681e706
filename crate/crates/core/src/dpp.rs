//! Quality-diversity L-ensembles in factored form and fixed-size sampling
//! by expected-size scaling.
//!
//! The kernel is `L = BᵀB` with `B = [q_1 φ_1, …, q_N φ_N]` (`R × N`). Only the
//! `R × R` dual matrix `C = BBᵀ` is ever decomposed. To draw a subset of size
//! `k`, the spectrum is scaled by `a` so that the expected DPP size
//! `Σ aλ/(1 + aλ)` equals `k`; eigenvector selection is repeated until it
//! picks exactly `k` vectors, after which the projection DPP they span is
//! sampled point by point. Conditioned on the size, this is the `k`-DPP of `L`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::roots;
use crate::{Error, Result};

/// Eigenvalues below this fraction of the largest are treated as zero.
pub const EIGEN_CLAMP: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct DualLEnsemble {
    b: DMatrix<f64>,
    qualities: Vec<f64>,
    eigvals: Vec<f64>,
    eigvecs: DMatrix<f64>,
    ids: Vec<u64>,
}

/// Builds `L_ij = q_i φ_iᵀ φ_j q_j` from an `N × R` embedding, with
/// `q_i = (quality_i / mean positive quality)^beta`.
pub fn build_l_ensemble(phi: &DMatrix<f64>, qualities: &[f64], beta: f64) -> Result<DualLEnsemble> {
    let n = phi.nrows();
    if qualities.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} qualities for {n} points",
            qualities.len()
        )));
    }
    if qualities.iter().any(|q| !q.is_finite() || *q < 0.0) {
        return Err(Error::InvalidArgument("qualities must be finite and nonnegative".into()));
    }
    if !beta.is_finite() || beta < 0.0 {
        return Err(Error::InvalidArgument(format!("quality exponent {beta} must be nonnegative")));
    }
    let positive: Vec<f64> = qualities.iter().copied().filter(|q| *q > 0.0).collect();
    if positive.is_empty() {
        return Err(Error::AllQualitiesZero);
    }
    let mean = positive.iter().sum::<f64>() / positive.len() as f64;
    let q: Vec<f64> = qualities.iter().map(|v| (v / mean).powf(beta)).collect();
    let mut b = phi.transpose();
    for (i, mut col) in b.column_iter_mut().enumerate() {
        col *= q[i];
    }
    let c = &b * b.transpose();
    let (eigvals, eigvecs) = sorted_eigen(c);
    Ok(DualLEnsemble {
        b,
        qualities: q,
        eigvals,
        eigvecs,
        ids: (0..n as u64).collect(),
    })
}

fn sorted_eigen(c: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(c);
    let r = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let max = order.first().map_or(0.0, |&i| eig.eigenvalues[i].max(0.0));
    let eigvals = order
        .iter()
        .map(|&i| {
            let v = eig.eigenvalues[i];
            if v > EIGEN_CLAMP * max { v } else { 0.0 }
        })
        .collect();
    let eigvecs = DMatrix::from_fn(r, r, |row, col| eig.eigenvectors[(row, order[col])]);
    (eigvals, eigvecs)
}

impl DualLEnsemble {
    pub fn n_points(&self) -> usize {
        self.b.ncols()
    }

    /// Eigenvalues of `C` (equivalently the nonzero spectrum of `L`), descending.
    pub fn eigvals(&self) -> &[f64] {
        &self.eigvals
    }

    pub fn qualities(&self) -> &[f64] {
        &self.qualities
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    /// Attaches external ids to the points (defaults to `0..N`).
    pub fn with_ids(mut self, ids: Vec<u64>) -> Result<Self> {
        if ids.len() != self.n_points() {
            return Err(Error::InvalidArgument(format!(
                "{} ids for {} points",
                ids.len(),
                self.n_points()
            )));
        }
        self.ids = ids;
        Ok(self)
    }

    pub fn rank(&self) -> usize {
        self.eigvals.iter().filter(|v| **v > 0.0).count()
    }

    /// Dense `N × N` kernel. Intended for small problems and checks.
    pub fn l_matrix(&self) -> DMatrix<f64> {
        self.b.transpose() * &self.b
    }

    /// Unit eigenvectors of `L` for the given spectrum positions, as columns.
    fn primal_eigvecs(&self, which: &[usize]) -> DMatrix<f64> {
        let mut v = DMatrix::zeros(self.eigvecs.nrows(), which.len());
        for (c, &j) in which.iter().enumerate() {
            let scale = self.eigvals[j].sqrt().recip();
            v.set_column(c, &(self.eigvecs.column(j) * scale));
        }
        self.b.transpose() * v
    }
}

fn expected_size(eigvals: &[f64], a: f64) -> f64 {
    eigvals
        .iter()
        .filter(|l| **l > 0.0)
        .map(|&l| {
            let x = a * l;
            x / (1.0 + x)
        })
        .sum()
}

/// Scale `a` such that `Σ aλ_i / (1 + aλ_i) = k`, by Brent's method on `ln a`.
pub fn solve_scale(eigvals: &[f64], k: usize) -> Result<f64> {
    let positive: Vec<f64> = eigvals.iter().copied().filter(|l| *l > 0.0).collect();
    let rank = positive.len();
    if k == 0 {
        return Err(Error::InvalidArgument("subset size must be at least 1".into()));
    }
    if rank <= k {
        return Err(Error::InsufficientRank { rank, k });
    }
    let kf = k as f64;
    if positive.iter().all(|l| *l == positive[0]) {
        return Ok(kf / ((rank - k) as f64 * positive[0]));
    }
    let f = |t: f64| expected_size(&positive, t.exp()) - kf;
    let mean = positive.iter().sum::<f64>() / rank as f64;
    let guess = (kf / ((rank - k) as f64 * mean)).ln();
    let (mut lo, mut hi) = (guess - 1.0, guess + 1.0);
    let mut expansions = 0;
    while f(lo) > 0.0 {
        lo -= 2.0 * (1 + expansions) as f64;
        expansions += 1;
        if expansions > 200 {
            return Err(Error::RootFinding("cannot bracket the scale from below".into()));
        }
    }
    while f(hi) < 0.0 {
        hi += 2.0 * (1 + expansions) as f64;
        expansions += 1;
        if expansions > 200 {
            return Err(Error::RootFinding("cannot bracket the scale from above".into()));
        }
    }
    let root = roots::brent(f, lo, hi, 1e-15, 1e-11, 500)?;
    let a = root.x.exp();
    let err = (expected_size(&positive, a) - kf).abs();
    if err >= 1e-8 {
        return Err(Error::RootFinding(format!("expected-size residual {err}")));
    }
    Ok(a)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub max_attempts: usize,
    /// Repair the closest attempt to exactly `k` instead of failing.
    pub fallback: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            max_attempts: 1000,
            fallback: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSample {
    pub row_ids: Vec<u64>,
    /// Point positions in the ensemble, in sampling order.
    pub indices: Vec<usize>,
    pub attempts: usize,
    pub scale: f64,
    pub fallback_used: bool,
}

/// Samples the projection DPP spanned by the columns of `y` (`N × k`,
/// orthonormal). Returns the chosen positions in order.
fn sample_projection(mut y: DMatrix<f64>, rng: &mut impl Rng) -> Vec<usize> {
    let n = y.nrows();
    let mut chosen = Vec::with_capacity(y.ncols());
    let mut taken = vec![false; n];
    while y.ncols() > 0 {
        let weights: Vec<f64> = (0..n)
            .map(|i| if taken[i] { 0.0 } else { y.row(i).norm_squared() })
            .collect();
        let max = weights.iter().copied().fold(0.0, f64::max);
        let cutoff = 1e-10 * max;
        let total: f64 = weights.iter().filter(|w| **w > cutoff).sum();
        if !(total > 0.0) {
            break;
        }
        let mut u = rng.random::<f64>() * total;
        let mut pick = None;
        for (i, &w) in weights.iter().enumerate() {
            if w <= cutoff {
                continue;
            }
            pick = Some(i);
            if u < w {
                break;
            }
            u -= w;
        }
        let Some(i) = pick else { break };
        chosen.push(i);
        taken[i] = true;

        // Restrict the span to vectors vanishing at point i.
        let (pivot, _) = y
            .row(i)
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (j, v)| if v.abs() > acc.1 { (j, v.abs()) } else { acc });
        let e = y.column(pivot).clone_owned();
        let e_i = e[i];
        for j in 0..y.ncols() {
            if j != pivot {
                let f = y[(i, j)] / e_i;
                let mut col = y.column_mut(j);
                col.axpy(-f, &e, 1.0);
            }
        }
        y = y.remove_column(pivot);
        orthonormalize(&mut y);
    }
    chosen
}

/// Modified Gram-Schmidt, applied twice; drops columns that collapse.
fn orthonormalize(y: &mut DMatrix<f64>) {
    for _ in 0..2 {
        let mut j = 0;
        while j < y.ncols() {
            for l in 0..j {
                let d = y.column(l).dot(&y.column(j));
                let prev = y.column(l).clone_owned();
                y.column_mut(j).axpy(-d, &prev, 1.0);
            }
            let norm = y.column(j).norm();
            if norm < 1e-12 {
                *y = y.clone().remove_column(j);
                continue;
            }
            y.column_mut(j).unscale_mut(norm);
            j += 1;
        }
    }
}

/// Draws a subset of exactly `k` points.
pub fn sample_k(le: &DualLEnsemble, k: usize, rng: &mut impl Rng, cfg: SamplerConfig) -> Result<SubsetSample> {
    let a = solve_scale(&le.eigvals, k)?;
    let spectrum: Vec<(usize, f64)> = le
        .eigvals
        .iter()
        .enumerate()
        .filter(|(_, l)| **l > 0.0)
        .map(|(j, &l)| (j, a * l / (1.0 + a * l)))
        .collect();
    let attempts = cfg.max_attempts.max(1);
    let mut closest: Option<Vec<usize>> = None;
    for attempt in 1..=attempts {
        let picked: Vec<usize> = spectrum
            .iter()
            .filter(|(_, p)| rng.random::<f64>() < *p)
            .map(|(j, _)| *j)
            .collect();
        if picked.len() == k {
            let indices = sample_projection(le.primal_eigvecs(&picked), rng);
            if indices.len() == k {
                return Ok(finish(le, indices, attempt, a, false));
            }
        }
        let better = closest
            .as_ref()
            .is_none_or(|c| picked.len().abs_diff(k) < c.len().abs_diff(k));
        if better {
            closest = Some(picked);
        }
    }
    if !cfg.fallback {
        return Err(Error::SamplingExhausted { k, attempts });
    }
    let picked = closest.unwrap_or_default();
    let mut indices = sample_projection(le.primal_eigvecs(&picked), rng);
    log::warn!(
        "no size-{k} DPP draw in {attempts} attempts; repairing a size-{} draw",
        indices.len()
    );
    repair_to_size(&mut indices, &le.qualities, k);
    Ok(finish(le, indices, attempts, a, true))
}

/// Trims lowest-quality points or appends the highest-quality unselected ones
/// (ties to the lower index) until `indices.len() == k`.
pub fn repair_to_size(indices: &mut Vec<usize>, qualities: &[f64], k: usize) {
    while indices.len() > k {
        let (at, _) = indices
            .iter()
            .enumerate()
            .min_by(|a, b| qualities[*a.1].total_cmp(&qualities[*b.1]).then(b.1.cmp(a.1)))
            .expect("non-empty");
        indices.remove(at);
    }
    if indices.len() < k {
        let mut rest: Vec<usize> = (0..qualities.len()).filter(|i| !indices.contains(i)).collect();
        rest.sort_by(|a, b| qualities[*b].total_cmp(&qualities[*a]).then(a.cmp(b)));
        indices.extend(rest.into_iter().take(k - indices.len()));
    }
}

fn finish(le: &DualLEnsemble, indices: Vec<usize>, attempts: usize, scale: f64, fallback_used: bool) -> SubsetSample {
    SubsetSample {
        row_ids: indices.iter().map(|&i| le.ids[i]).collect(),
        indices,
        attempts,
        scale,
        fallback_used,
    }
}

/// Samples the projection DPP spanned by every positive-eigenvalue direction
/// (the `a → ∞` limit); the result has size equal to the rank.
pub fn sample_full_rank(le: &DualLEnsemble, rng: &mut impl Rng) -> Vec<usize> {
    let all: Vec<usize> = (0..le.eigvals.len()).filter(|&j| le.eigvals[j] > 0.0).collect();
    sample_projection(le.primal_eigvecs(&all), rng)
}

/// `det(L_S) / det(L + I)` by dense determinants.
pub fn exact_subset_probability(l: &DMatrix<f64>, subset: &[usize]) -> f64 {
    let n = l.nrows();
    debug_assert!(n <= 15, "dense oracle is meant for N <= 15");
    let minor = DMatrix::from_fn(subset.len(), subset.len(), |i, j| l[(subset[i], subset[j])]);
    let numerator = if subset.is_empty() { 1.0 } else { minor.determinant() };
    numerator / (l + DMatrix::identity(n, n)).determinant()
}
