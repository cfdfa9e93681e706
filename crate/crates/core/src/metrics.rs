//! Learning-curve metrics: normalized accuracy, NAULC, paired win-rate
//! posteriors and empirical density bands.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::factorial::binomial;

use crate::{Error, Result};

/// Jeffreys prior parameter for win probabilities.
pub const JEFFREYS: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub dataset: String,
    pub method: String,
    pub n_seed: usize,
    pub trial: u64,
    pub n_tr: usize,
    pub r2: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialTable {
    records: Vec<TrialRecord>,
}

type RecordKey = (String, String, usize, u64, usize);

fn key(r: &TrialRecord) -> RecordKey {
    (r.dataset.clone(), r.method.clone(), r.n_seed, r.trial, r.n_tr)
}

impl TrialTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: Vec<TrialRecord>) -> Result<Self> {
        let mut t = Self::new();
        for r in records {
            t.push(r)?;
        }
        Ok(t)
    }

    pub fn push(&mut self, r: TrialRecord) -> Result<()> {
        let k = key(&r);
        if self.records.iter().any(|x| key(x) == k) {
            return Err(Error::InvalidArgument(format!(
                "duplicate record for method `{}`, n_seed {}, trial {}, N_tr {}",
                r.method, r.n_seed, r.trial, r.n_tr
            )));
        }
        self.records.push(r);
        Ok(())
    }

    pub fn records(&self) -> &[TrialRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records in a canonical order (dataset, method, n_seed, trial, N_tr).
    pub fn sorted(&self) -> Vec<&TrialRecord> {
        let mut out: Vec<&TrialRecord> = self.records.iter().collect();
        out.sort_by(|a, b| key(a).cmp(&key(b)));
        out
    }

    /// Columns `dataset,method,n_seed,trial,n_tr,r2[,accuracy]`.
    pub fn write_csv(&self, path: &Path, accuracy: Option<&[f64]>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["dataset", "method", "n_seed", "trial", "n_tr", "r2"];
        if accuracy.is_some() {
            header.push("accuracy");
        }
        w.write_record(&header)?;
        for (i, r) in self.records.iter().enumerate() {
            let mut row = vec![
                r.dataset.clone(),
                r.method.clone(),
                r.n_seed.to_string(),
                r.trial.to_string(),
                r.n_tr.to_string(),
                format!("{:?}", r.r2),
            ];
            if let Some(acc) = accuracy {
                row.push(format!("{:?}", acc[i]));
            }
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Every record's r² divided by the largest r² seen for its dataset, in
/// record order. Negative values are kept.
pub fn normalize_accuracy(t: &TrialTable) -> Result<Vec<f64>> {
    let mut best: BTreeMap<&str, f64> = BTreeMap::new();
    for r in t.records() {
        let e = best.entry(r.dataset.as_str()).or_insert(f64::NEG_INFINITY);
        *e = e.max(r.r2);
    }
    if let Some((_, &m)) = best.iter().find(|(_, m)| !(**m > 0.0)) {
        return Err(Error::UnlearnableDataset(m));
    }
    Ok(t.records().iter().map(|r| r.r2 / best[r.dataset.as_str()]).collect())
}

/// Trapezoidal area under `(N_tr, accuracy)` divided by the N_tr range.
/// Points are sorted by N_tr first.
pub fn naulc(curve: &[(f64, f64)]) -> Result<f64> {
    if curve.len() < 2 {
        return Err(Error::InvalidArgument("NAULC needs at least two curve points".into()));
    }
    let mut pts = curve.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let span = pts[pts.len() - 1].0 - pts[0].0;
    if !(span > 0.0) {
        return Err(Error::InvalidArgument("NAULC needs distinct training sizes".into()));
    }
    let area: f64 = pts
        .windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
        .sum();
    Ok(area / span)
}

/// Inverse of the regularized incomplete beta function by bisection.
pub fn beta_quantile(p: f64, a: f64, b: f64) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if beta_reg(a, b, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseComparison {
    pub n_tr: usize,
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
    pub alpha: f64,
    pub beta: f64,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Win-probability posterior for A over B from paired scores `(a, b)` at one
/// training size. Ties count for neither side.
pub fn pairwise_beta_binomial(n_tr: usize, pairs: &[(f64, f64)], mass: f64) -> Result<PairwiseComparison> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument(format!("no paired trials at N_tr = {n_tr}")));
    }
    if !(mass > 0.0 && mass < 1.0) {
        return Err(Error::InvalidArgument(format!("interval mass {mass} must lie in (0, 1)")));
    }
    let wins = pairs.iter().filter(|(a, b)| a > b).count();
    let losses = pairs.iter().filter(|(a, b)| a < b).count();
    let ties = pairs.len() - wins - losses;
    let alpha = JEFFREYS + wins as f64;
    let beta = JEFFREYS + losses as f64;
    let tail = 0.5 * (1.0 - mass);
    Ok(PairwiseComparison {
        n_tr,
        wins,
        ties,
        losses,
        alpha,
        beta,
        mean: alpha / (alpha + beta),
        lower: beta_quantile(tail, alpha, beta),
        upper: beta_quantile(1.0 - tail, alpha, beta),
    })
}

/// Pairs the scores of two methods by trial id at every N_tr they share.
/// Inputs are `(trial, N_tr, score)`.
pub fn pair_trials(a: &[(u64, usize, f64)], b: &[(u64, usize, f64)]) -> BTreeMap<usize, Vec<(f64, f64)>> {
    let lookup: BTreeMap<(u64, usize), f64> = b.iter().map(|&(t, n, s)| ((t, n), s)).collect();
    let mut out: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    let mut sorted = a.to_vec();
    sorted.sort_by(|x, y| (x.1, x.0).cmp(&(y.1, y.0)));
    for (t, n, s) in sorted {
        if let Some(&o) = lookup.get(&(t, n)) {
            out.entry(n).or_default().push((s, o));
        }
    }
    out
}

/// One-sided sign test: `P(X ≥ wins)` for `X ~ Binomial(wins + losses, 1/2)`.
pub fn sign_test_p(wins: usize, losses: usize) -> f64 {
    let n = (wins + losses) as u64;
    let half_n = 0.5f64.powi(n as i32);
    (wins as u64..=n).map(|i| binomial(n, i) * half_n).sum::<f64>().min(1.0)
}

/// Shortest window of sorted values holding `ceil(mass · n)` of them; ties
/// go to the lowest start.
pub fn hdi_band(values: &[f64], mass: f64) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::InvalidArgument("a density band needs at least two trials".into()));
    }
    if !(mass > 0.0 && mass <= 1.0) {
        return Err(Error::InvalidArgument(format!("band mass {mass} must lie in (0, 1]")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let w = ((mass * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    let mut best = 0;
    for i in 1..=n - w {
        if v[i + w - 1] - v[i] < v[best + w - 1] - v[best] {
            best = i;
        }
    }
    Ok((v[best], v[best + w - 1]))
}

/// Sample mean and standard deviation (`n - 1` denominator; zero for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// NAULC of every `(dataset, method, n_seed, trial)` curve, using the
/// accuracies from [`normalize_accuracy`].
pub fn naulc_by_trial(t: &TrialTable, accuracy: &[f64]) -> Result<BTreeMap<(String, String, usize, u64), f64>> {
    let mut curves: BTreeMap<(String, String, usize, u64), Vec<(f64, f64)>> = BTreeMap::new();
    for (r, &acc) in t.records().iter().zip(accuracy) {
        curves
            .entry((r.dataset.clone(), r.method.clone(), r.n_seed, r.trial))
            .or_default()
            .push((r.n_tr as f64, acc));
    }
    curves.into_iter().map(|(k, c)| Ok((k, naulc(&c)?))).collect()
}

/// Distinct N_tr values present in a table.
pub fn training_sizes(t: &TrialTable) -> BTreeSet<usize> {
    t.records().iter().map(|r| r.n_tr).collect()
}
