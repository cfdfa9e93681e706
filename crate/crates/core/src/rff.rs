//! Random Fourier features for the squared-exponential kernel.
//!
//! Frequencies are drawn as `ω ~ N(0, I/ℓ)` and phases as `b ~ U[0, 2π)`.
//! Under that law `φ(x)ᵀφ(y)` is an unbiased estimate of
//! `exp(-‖x - y‖² / (2ℓ))`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LengthscalePolicy {
    /// Median pairwise squared distance over a subsample of at most 1000 rows.
    MedianHeuristic,
    Fixed { value: f64 },
}

impl Default for LengthscalePolicy {
    fn default() -> Self {
        LengthscalePolicy::MedianHeuristic
    }
}

const MEDIAN_SUBSAMPLE: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    /// `R × d`
    omegas: DMatrix<f64>,
    phases: Vec<f64>,
    lengthscale: f64,
}

impl FeatureMap {
    pub fn n_features(&self) -> usize {
        self.phases.len()
    }

    pub fn input_dim(&self) -> usize {
        self.omegas.ncols()
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    pub fn omegas(&self) -> &DMatrix<f64> {
        &self.omegas
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    /// `N × R` matrix with rows `φ(x_i)`.
    pub fn embed(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::InvalidArgument(format!(
                "feature map expects {} columns, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        let scale = (2.0 / self.n_features() as f64).sqrt();
        let mut out = x * self.omegas.transpose();
        for (r, mut col) in out.column_iter_mut().enumerate() {
            let b = self.phases[r];
            col.apply(|v| *v = scale * (*v + b).cos());
        }
        Ok(out)
    }

    /// Kernel value implied by the frequency law.
    pub fn kernel(&self, sq_dist: f64) -> f64 {
        (-sq_dist / (2.0 * self.lengthscale)).exp()
    }
}

/// Median of squared pairwise distances among (a subsample of) the rows.
pub fn median_sq_distance(x: &DMatrix<f64>, seed: u64) -> f64 {
    let n = x.nrows();
    let rows: Vec<usize> = if n > MEDIAN_SUBSAMPLE {
        let mut r = index::sample(&mut rng::named_rng(seed, "median-heuristic"), n, MEDIAN_SUBSAMPLE).into_vec();
        r.sort_unstable();
        r
    } else {
        (0..n).collect()
    };
    let mut d2 = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for (a, &i) in rows.iter().enumerate() {
        for &j in &rows[a + 1..] {
            d2.push((x.row(i) - x.row(j)).norm_squared());
        }
    }
    if d2.is_empty() {
        return 0.0;
    }
    let mid = d2.len() / 2;
    let (_, m, _) = d2.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}

pub fn fit_feature_map(
    x: &DMatrix<f64>,
    n_features: usize,
    lengthscale: LengthscalePolicy,
    seed: u64,
) -> Result<FeatureMap> {
    if x.ncols() == 0 {
        return Err(Error::InvalidArgument("feature matrix has no columns".into()));
    }
    if n_features == 0 {
        return Err(Error::InvalidArgument("feature count must be at least 1".into()));
    }
    let ell = match lengthscale {
        LengthscalePolicy::Fixed { value } => value,
        LengthscalePolicy::MedianHeuristic => {
            let m = median_sq_distance(x, seed);
            // All rows identical: any positive lengthscale gives the same embedding geometry.
            if m > 0.0 { m } else { 1.0 }
        }
    };
    if !(ell > 0.0 && ell.is_finite()) {
        return Err(Error::InvalidArgument(format!("lengthscale {ell} must be positive")));
    }
    Ok(sample_map(x.ncols(), n_features, ell, seed))
}

/// Draws a map for `dim`-dimensional inputs with a given lengthscale.
pub fn sample_map(dim: usize, n_features: usize, lengthscale: f64, seed: u64) -> FeatureMap {
    let mut rng = rng::named_rng(seed, "rff");
    let sd = lengthscale.sqrt().recip();
    let omegas = DMatrix::from_fn(n_features, dim, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * sd
    });
    let phases = (0..n_features).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    FeatureMap {
        omegas,
        phases,
        lengthscale,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, v.len(), v)
    }

    #[test]
    fn shapes() {
        let fm = sample_map(2, 4, 1.0, 0);
        assert_eq!(fm.omegas().shape(), (4, 2));
        assert_eq!(fm.phases().len(), 4);
        assert!(fm.phases().iter().all(|b| (0.0..2.0 * PI).contains(b)));
        let x = DMatrix::from_row_slice(3, 2, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(fm.embed(&x).unwrap().shape(), (3, 4));
        assert!(fm.embed(&point(&[1.0])).is_err());
    }

    #[test]
    fn nonpositive_lengthscale_rejected() {
        let x = point(&[1.0, 2.0]);
        for bad in [0.0, -1.0] {
            assert!(fit_feature_map(&x, 4, LengthscalePolicy::Fixed { value: bad }, 0).is_err());
        }
    }

    #[test]
    fn frequency_variance_is_inverse_lengthscale() {
        let ell = 2.5;
        let fm = sample_map(10, 10_000, ell, 4);
        let w = fm.omegas();
        let n = w.len() as f64;
        let mean = w.sum() / n;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var * ell - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn deterministic_given_seed() {
        let x = DMatrix::from_fn(20, 3, |i, j| (i * 3 + j) as f64 * 0.1);
        let a = fit_feature_map(&x, 16, LengthscalePolicy::MedianHeuristic, 7).unwrap();
        let b = fit_feature_map(&x, 16, LengthscalePolicy::MedianHeuristic, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn squared_norm_bounds() {
        let fm = sample_map(3, 64, 1.0, 1);
        let x = DMatrix::from_fn(200, 3, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        let phi = fm.embed(&x).unwrap();
        let mut mean = 0.0;
        for row in phi.row_iter() {
            let s = row.norm_squared();
            assert!((0.0..=2.0 + 1e-12).contains(&s));
            mean += s;
        }
        mean /= 200.0;
        assert!((mean - 1.0).abs() < 0.1, "{mean}");
    }

    #[test]
    fn self_inner_product_near_one() {
        let fm = sample_map(2, 4096, 1.0, 2);
        let phi = fm.embed(&point(&[0.3, -1.2])).unwrap();
        assert!((phi.row(0).norm_squared() - 1.0).abs() < 0.05);
    }

    #[test]
    fn half_kernel_distance() {
        let ell = 1.7;
        let fm = sample_map(2, 4096, ell, 3);
        let r = (2.0 * ell * 2f64.ln()).sqrt();
        let x = DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.1 + r, 0.2]);
        let phi = fm.embed(&x).unwrap();
        let k = phi.row(0).dot(&phi.row(1));
        assert!((k - 0.5).abs() < 0.05, "{k}");
    }

    #[test]
    fn inner_products_depend_on_difference_only() {
        // Averaged over many maps the estimate is the same after translating both points.
        let ell = 1.0;
        let (mut a, mut b) = (0.0, 0.0);
        for s in 0..200 {
            let fm = sample_map(2, 256, ell, 1000 + s);
            let p = fm.embed(&DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.8, 0.3])).unwrap();
            let q = fm.embed(&DMatrix::from_row_slice(2, 2, &[5.0, -3.0, 5.8, -2.7])).unwrap();
            a += p.row(0).dot(&p.row(1));
            b += q.row(0).dot(&q.row(1));
        }
        let truth = (-(0.64 + 0.09) / 2.0f64).exp();
        assert!((a / 200.0 - truth).abs() < 0.02);
        assert!((b / 200.0 - truth).abs() < 0.02);
    }

    #[test]
    fn median_heuristic_on_known_points() {
        // Squared distances are {1, 1, 1, 4, 4, 9}; the upper median is 4.
        let x = DMatrix::from_row_slice(4, 1, &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(median_sq_distance(&x, 0), 4.0);
    }
}
