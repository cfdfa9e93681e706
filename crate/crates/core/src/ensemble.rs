//! CART regression trees and bagged ensembles with recorded bootstrap
//! membership, so that every training row can be split into the trees that
//! saw it (in-bag) and the trees that did not (out-of-bag).

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ColumnKind, ColumnSchema, TabularDataset};
use crate::rng::{self, StreamRng};
use crate::{Error, Result};

/// Number of candidate columns examined at each split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    All,
    /// `max(1, floor(d / 3))`.
    Third,
    Count(usize),
}

impl MaxFeatures {
    fn resolve(self, d: usize) -> usize {
        match self {
            MaxFeatures::All => d,
            MaxFeatures::Third => (d / 3).max(1),
            MaxFeatures::Count(c) => c.clamp(1, d.max(1)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeLimits {
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
}

impl Default for TreeLimits {
    fn default() -> Self {
        TreeLimits {
            max_depth: None,
            min_samples_leaf: 1,
            max_features: MaxFeatures::Third,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Split {
    /// Left branch when `value <= threshold`.
    Numeric { column: usize, threshold: f64 },
    /// Left branch when the category code equals `code`.
    Categorical { column: usize, code: u32 },
}

impl Split {
    fn goes_left(&self, x: &[f64]) -> bool {
        match *self {
            Split::Numeric { column, threshold } => x[column] <= threshold,
            Split::Categorical { column, code } => x[column] == f64::from(code),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf { value: f64, samples: usize },
    Internal { split: Split, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
    depth: usize,
}

impl RegressionTree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn root_split(&self) -> Option<Split> {
        match self.nodes.first() {
            Some(Node::Internal { split, .. }) => Some(*split),
            _ => None,
        }
    }

    /// Index of the leaf reached by `x`.
    pub fn leaf_of(&self, x: &[f64]) -> usize {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { .. } => return at,
                Node::Internal { split, left, right } => {
                    at = if split.goes_left(x) { *left } else { *right };
                }
            }
        }
    }

    pub fn predict_one(&self, x: &[f64]) -> f64 {
        match self.nodes[self.leaf_of(x)] {
            Node::Leaf { value, .. } => value,
            Node::Internal { .. } => unreachable!("leaf_of returns a leaf"),
        }
    }

    pub fn predict(&self, d: &TabularDataset) -> Vec<f64> {
        (0..d.n_rows()).map(|i| self.predict_one(d.features(i))).collect()
    }
}

struct Builder<'a> {
    data: &'a TabularDataset,
    target: &'a [f64],
    limits: TreeLimits,
    mtry: usize,
    rng: &'a mut StreamRng,
    nodes: Vec<Node>,
    depth: usize,
}

struct Candidate {
    split: Split,
    score: f64,
}

impl Builder<'_> {
    fn leaf(&mut self, rows: &[usize]) -> usize {
        let value = rows.iter().map(|&r| self.target[r]).sum::<f64>() / rows.len() as f64;
        self.nodes.push(Node::Leaf {
            value,
            samples: rows.len(),
        });
        self.nodes.len() - 1
    }

    fn build(&mut self, rows: &mut [usize], depth: usize) -> usize {
        self.depth = self.depth.max(depth);
        let n = rows.len();
        let first = self.target[rows[0]];
        let pure = rows.iter().all(|&r| self.target[r] == first);
        let depth_ok = self.limits.max_depth.is_none_or(|m| depth < m);
        if pure || !depth_ok || n < 2 * self.limits.min_samples_leaf.max(1) {
            return self.leaf(rows);
        }
        let Some(split) = self.best_split(rows) else {
            return self.leaf(rows);
        };
        let mut mid = 0;
        for i in 0..n {
            if split.goes_left(self.data.features(rows[i])) {
                rows.swap(i, mid);
                mid += 1;
            }
        }
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value: f64::NAN,
            samples: n,
        });
        let (l, r) = rows.split_at_mut(mid);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[at] = Node::Internal { split, left, right };
        at
    }

    fn best_split(&mut self, rows: &[usize]) -> Option<Split> {
        let d = self.data.n_cols();
        let mut candidates: Vec<usize> = index::sample(self.rng, d, self.mtry).into_vec();
        candidates.sort_unstable();
        if let Some(s) = self.scan(rows, &candidates) {
            return Some(s);
        }
        // Every sampled column was constant on this node; fall back to the rest.
        let rest: Vec<usize> = (0..d).filter(|c| !candidates.contains(c)).collect();
        self.scan(rows, &rest)
    }

    /// Best split over `columns` (ascending), maximizing `sum_l^2/n_l + sum_r^2/n_r`,
    /// which is equivalent to minimizing the children's summed squared error.
    /// Ties keep the earliest column, then the lowest threshold.
    fn scan(&self, rows: &[usize], columns: &[usize]) -> Option<Split> {
        let n = rows.len();
        let min_leaf = self.limits.min_samples_leaf.max(1);
        let total: f64 = rows.iter().map(|&r| self.target[r]).sum();
        let parent = total * total / n as f64;
        let mut best: Option<Candidate> = None;
        let mut consider = |split: Split, score: f64| {
            if best.as_ref().is_none_or(|b| score > b.score) {
                best = Some(Candidate { split, score });
            }
        };
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
        for &column in columns {
            match self.data.schema()[column].kind {
                ColumnKind::Numeric => {
                    pairs.clear();
                    pairs.extend(rows.iter().map(|&r| (self.data.value(r, column), self.target[r])));
                    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
                    let mut left_sum = 0.0;
                    for i in 0..n - 1 {
                        left_sum += pairs[i].1;
                        let (lo, hi) = (pairs[i].0, pairs[i + 1].0);
                        let n_left = i + 1;
                        if lo == hi || n_left < min_leaf || n - n_left < min_leaf {
                            continue;
                        }
                        let right_sum = total - left_sum;
                        let score = left_sum * left_sum / n_left as f64
                            + right_sum * right_sum / (n - n_left) as f64;
                        let mut threshold = 0.5 * (lo + hi);
                        if threshold >= hi {
                            threshold = lo;
                        }
                        consider(Split::Numeric { column, threshold }, score);
                    }
                }
                ColumnKind::Categorical => {
                    let k = self.data.schema()[column].categories.len();
                    let mut sums = vec![0.0; k];
                    let mut counts = vec![0usize; k];
                    for &r in rows {
                        let c = self.data.value(r, column) as usize;
                        sums[c] += self.target[r];
                        counts[c] += 1;
                    }
                    for code in 0..k {
                        let n_left = counts[code];
                        if n_left < min_leaf || n - n_left < min_leaf {
                            continue;
                        }
                        let right_sum = total - sums[code];
                        let score = sums[code] * sums[code] / n_left as f64
                            + right_sum * right_sum / (n - n_left) as f64;
                        consider(
                            Split::Categorical {
                                column,
                                code: code as u32,
                            },
                            score,
                        );
                    }
                }
            }
        }
        // Reject splits whose reduction is lost in rounding.
        let scale = rows.iter().map(|&r| self.target[r].powi(2)).sum::<f64>();
        best.filter(|b| b.score - parent > 1e-12 * scale.max(f64::MIN_POSITIVE))
            .map(|b| b.split)
    }
}

fn fit_tree_positions(
    d: &TabularDataset,
    positions: &[usize],
    limits: TreeLimits,
    rng: &mut StreamRng,
) -> Result<RegressionTree> {
    let target = d.require_target()?;
    if positions.is_empty() {
        return Err(Error::InvalidArgument("empty training subset".into()));
    }
    if d.n_cols() == 0 {
        return Err(Error::InvalidArgument("dataset has no feature columns".into()));
    }
    let mut rows = positions.to_vec();
    let mut b = Builder {
        data: d,
        target,
        limits,
        mtry: limits.max_features.resolve(d.n_cols()),
        rng,
        nodes: Vec::new(),
        depth: 0,
    };
    b.build(&mut rows, 0);
    Ok(RegressionTree {
        nodes: b.nodes,
        depth: b.depth,
    })
}

/// Fits one tree on a multiset of row ids (repeats count as extra weight).
pub fn fit_tree(
    d: &TabularDataset,
    row_subset: &[u64],
    limits: TreeLimits,
    rng_seed: u64,
) -> Result<RegressionTree> {
    let positions = row_subset
        .iter()
        .map(|&id| d.position_of(id).ok_or(Error::UnknownRowId(id)))
        .collect::<Result<Vec<_>>>()?;
    fit_tree_positions(d, &positions, limits, &mut rng::rng_from_seed(rng_seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub n_trees: usize,
    pub limits: TreeLimits,
    /// When false every tree trains on the full dataset once (test mode).
    pub bootstrap: bool,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            n_trees: 100,
            limits: TreeLimits::default(),
            bootstrap: true,
        }
    }
}

pub const ENSEMBLE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaggedEnsemble {
    format_version: u32,
    trees: Vec<RegressionTree>,
    /// Per tree, the sorted bootstrap draw as positions into the training rows.
    inbag: Vec<Vec<u32>>,
    training_ids: Vec<u64>,
    schema: Vec<ColumnSchema>,
}

impl BaggedEnsemble {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn training_n(&self) -> usize {
        self.training_ids.len()
    }

    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }

    pub fn training_ids(&self) -> &[u64] {
        &self.training_ids
    }

    pub fn schema(&self) -> &[ColumnSchema] {
        &self.schema
    }

    /// Bootstrap draw of tree `t` as training row ids, with multiplicity.
    pub fn inbag_multiset(&self, t: usize) -> Vec<u64> {
        self.inbag[t].iter().map(|&p| self.training_ids[p as usize]).collect()
    }

    /// Distinct training row ids drawn for tree `t`.
    pub fn inbag_set(&self, t: usize) -> Vec<u64> {
        let mut ids = self.inbag_multiset(t);
        ids.dedup();
        ids
    }

    pub fn is_inbag(&self, t: usize, position: usize) -> bool {
        self.inbag[t].binary_search(&(position as u32)).is_ok()
    }

    /// `(in-bag trees, out-of-bag trees)` for a training position.
    pub fn partition_position(&self, position: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.trees.len()).partition(|&t| self.is_inbag(t, position))
    }

    pub fn partition_membership(&self, row_id: u64) -> Result<(Vec<usize>, Vec<usize>)> {
        let pos = self
            .training_ids
            .iter()
            .position(|&id| id == row_id)
            .ok_or(Error::UnknownRowId(row_id))?;
        Ok(self.partition_position(pos))
    }

    /// `M × n` matrix of per-tree predictions on the rows of `x`.
    pub fn predict_matrix(&self, x: &TabularDataset) -> Result<DMatrix<f64>> {
        x.check_compatible(&self.schema)?;
        let rows: Vec<Vec<f64>> = self.trees.par_iter().map(|t| t.predict(x)).collect();
        Ok(DMatrix::from_fn(self.trees.len(), x.n_rows(), |t, j| rows[t][j]))
    }

    pub fn predict_mean(&self, x: &TabularDataset) -> Result<Vec<f64>> {
        let p = self.predict_matrix(x)?;
        let m = p.nrows() as f64;
        Ok(p.column_iter().map(|c| c.sum() / m).collect())
    }

    /// Out-of-bag prediction for every training row: the mean prediction of
    /// the trees whose bootstrap missed the row. `None` when no tree did.
    pub fn oob_predictions(&self, train: &TabularDataset) -> Result<Vec<Option<f64>>> {
        if train.row_ids() != self.training_ids.as_slice() {
            return Err(Error::SchemaMismatch(
                "dataset is not the ensemble's training set".into(),
            ));
        }
        let p = self.predict_matrix(train)?;
        Ok((0..train.n_rows())
            .map(|i| {
                let (sum, count) = (0..self.trees.len())
                    .filter(|&t| !self.is_inbag(t, i))
                    .fold((0.0, 0usize), |(s, c), t| (s + p[(t, i)], c + 1));
                (count > 0).then(|| sum / count as f64)
            })
            .collect())
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<BaggedEnsemble> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let e: BaggedEnsemble = serde_json::from_reader(std::io::BufReader::new(file))?;
        if e.format_version != ENSEMBLE_FORMAT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported ensemble format version {}",
                e.format_version
            )));
        }
        Ok(e)
    }
}

/// Fits `cfg.n_trees` trees, each on its own `N`-draw bootstrap. Tree `t`
/// draws from a stream seeded by `(seed, t)`, so the result does not depend
/// on the number of worker threads.
pub fn fit_ensemble(d: &TabularDataset, cfg: &EnsembleConfig, seed: u64) -> Result<BaggedEnsemble> {
    d.require_target()?;
    let n = d.n_rows();
    if n < 2 {
        return Err(Error::NotEnoughPoints { k: 2, available: n });
    }
    if cfg.n_trees == 0 {
        return Err(Error::InvalidArgument("n_trees must be at least 1".into()));
    }
    let fitted: Vec<(RegressionTree, Vec<u32>)> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::rng_from_seed(rng::derive_seed(seed, t as u64));
            let mut draw: Vec<u32> = if cfg.bootstrap {
                (0..n).map(|_| rng.random_range(0..n as u32)).collect()
            } else {
                (0..n as u32).collect()
            };
            draw.sort_unstable();
            let positions: Vec<usize> = draw.iter().map(|&p| p as usize).collect();
            fit_tree_positions(d, &positions, cfg.limits, &mut rng).map(|tree| (tree, draw))
        })
        .collect::<Result<_>>()?;
    let (trees, inbag) = fitted.into_iter().unzip();
    Ok(BaggedEnsemble {
        format_version: ENSEMBLE_FORMAT_VERSION,
        trees,
        inbag,
        training_ids: d.row_ids().to_vec(),
        schema: d.schema().to_vec(),
    })
}

/// Probability that at least one of `n` training rows lacks an out-of-bag
/// model in an ensemble of `m` bootstrapped trees:
/// `1 - (1 - (1 - 1/e)^m)^n`.
pub fn min_ensemble_size_check(m: u64, n: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    if m == 0 {
        return 1.0;
    }
    let all_inbag = (m as f64 * (-(-1.0f64).exp()).ln_1p()).exp();
    -(n as f64 * (-all_inbag).ln_1p()).exp_m1()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ColumnSchema;
    use proptest::prelude::*;
    use rand::Rng;

    fn one_d(xs: &[f64], ys: &[f64]) -> TabularDataset {
        TabularDataset::new(
            vec![ColumnSchema::numeric("x")],
            xs.to_vec(),
            Some(ys.to_vec()),
            None,
        )
        .unwrap()
    }

    fn all_ids(d: &TabularDataset) -> Vec<u64> {
        d.row_ids().to_vec()
    }

    #[test]
    fn constant_target_single_leaf() {
        let d = one_d(&[0.0, 1.0, 2.0], &[5.0, 5.0, 5.0]);
        let t = fit_tree(&d, &all_ids(&d), TreeLimits::default(), 1).unwrap();
        assert_eq!(t.nodes(), &[Node::Leaf { value: 5.0, samples: 3 }]);
    }

    #[test]
    fn step_function_splits_between_one_and_two() {
        let d = one_d(&[0.0, 1.0, 2.0, 3.0], &[0.0, 0.0, 1.0, 1.0]);
        let t = fit_tree(&d, &all_ids(&d), TreeLimits::default(), 1).unwrap();
        assert_eq!(t.depth(), 1);
        assert_eq!(
            t.root_split(),
            Some(Split::Numeric {
                column: 0,
                threshold: 1.5
            })
        );
        assert_eq!(t.predict(&d), vec![0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn min_samples_leaf_equal_n_gives_mean() {
        let d = one_d(&[0.0, 1.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 6.0]);
        let limits = TreeLimits {
            min_samples_leaf: 4,
            ..TreeLimits::default()
        };
        let t = fit_tree(&d, &all_ids(&d), limits, 1).unwrap();
        assert_eq!(t.n_leaves(), 1);
        assert_eq!(t.predict_one(&[10.0]), 3.0);
    }

    #[test]
    fn max_depth_is_respected() {
        let xs: Vec<f64> = (0..64).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (x * 0.7).sin()).collect();
        let d = one_d(&xs, &ys);
        for depth in 0..5 {
            let limits = TreeLimits {
                max_depth: Some(depth),
                ..TreeLimits::default()
            };
            assert!(fit_tree(&d, &all_ids(&d), limits, 3).unwrap().depth() <= depth);
        }
    }

    #[test]
    fn categorical_one_vs_rest() {
        let schema = vec![ColumnSchema::categorical(
            "c",
            vec!["a".into(), "b".into(), "c".into()],
        )];
        let d = TabularDataset::new(
            schema,
            vec![0.0, 1.0, 2.0, 1.0],
            Some(vec![0.0, 10.0, 0.0, 10.0]),
            None,
        )
        .unwrap();
        let t = fit_tree(&d, &all_ids(&d), TreeLimits::default(), 0).unwrap();
        assert_eq!(t.root_split(), Some(Split::Categorical { column: 0, code: 1 }));
        assert_eq!(t.predict(&d), vec![0.0, 10.0, 0.0, 10.0]);
    }

    #[test]
    fn missing_target_is_an_error() {
        let d = one_d(&[0.0, 1.0], &[0.0, 1.0]).without_target();
        assert!(matches!(
            fit_tree(&d, &[0, 1], TreeLimits::default(), 0),
            Err(Error::NoTarget)
        ));
        assert!(matches!(
            fit_ensemble(&d, &EnsembleConfig::default(), 0),
            Err(Error::NoTarget)
        ));
    }

    fn sse(ys: &[f64]) -> f64 {
        if ys.is_empty() {
            return 0.0;
        }
        let m = ys.iter().sum::<f64>() / ys.len() as f64;
        ys.iter().map(|y| (y - m).powi(2)).sum()
    }

    proptest! {
        // Leaf values equal the mean of the training targets routed to them.
        #[test]
        fn leaves_are_routed_means(
            pts in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -3.0f64..3.0), 2..40),
            seed in any::<u64>(),
        ) {
            let values: Vec<f64> = pts.iter().flat_map(|p| [p.0, p.1]).collect();
            let target: Vec<f64> = pts.iter().map(|p| p.2).collect();
            let d = TabularDataset::new(
                vec![ColumnSchema::numeric("a"), ColumnSchema::numeric("b")],
                values, Some(target.clone()), None,
            ).unwrap();
            let mut rng = rng::rng_from_seed(seed);
            let draw: Vec<usize> = (0..d.n_rows()).map(|_| rng.random_range(0..d.n_rows())).collect();
            let t = fit_tree_positions(&d, &draw, TreeLimits::default(), &mut rng).unwrap();
            let mut sums = vec![(0.0, 0usize); t.nodes().len()];
            for &p in &draw {
                let leaf = t.leaf_of(d.features(p));
                sums[leaf].0 += target[p];
                sums[leaf].1 += 1;
            }
            for (i, node) in t.nodes().iter().enumerate() {
                if let Node::Leaf { value, samples } = node {
                    prop_assert_eq!(*samples, sums[i].1);
                    prop_assert!((value - sums[i].0 / sums[i].1 as f64).abs() <= 1e-12);
                }
            }
        }

        // On 1-D data the root split attains the exhaustive-search optimum.
        #[test]
        fn root_split_matches_exhaustive_search(
            pts in prop::collection::vec((0u8..12, -3.0f64..3.0), 2..=20),
        ) {
            let xs: Vec<f64> = pts.iter().map(|p| f64::from(p.0)).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let d = one_d(&xs, &ys);
            let limits = TreeLimits { max_depth: Some(1), ..TreeLimits::default() };
            let t = fit_tree(&d, &all_ids(&d), limits, 0).unwrap();
            let split_sse = |thr: f64| {
                let (l, r): (Vec<f64>, Vec<f64>) = (0..xs.len()).fold((vec![], vec![]), |mut acc, i| {
                    if xs[i] <= thr { acc.0.push(ys[i]) } else { acc.1.push(ys[i]) }
                    acc
                });
                (l.is_empty() || r.is_empty(), sse(&l) + sse(&r))
            };
            let mut distinct = xs.clone();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            let best = distinct.windows(2)
                .map(|w| split_sse(0.5 * (w[0] + w[1])).1)
                .fold(f64::INFINITY, f64::min);
            match t.root_split() {
                Some(Split::Numeric { threshold, .. }) => {
                    let (empty, got) = split_sse(threshold);
                    prop_assert!(!empty);
                    prop_assert!(got <= best + 1e-9 * (1.0 + best));
                }
                None => prop_assert!(distinct.len() == 1 || sse(&ys) - best <= 1e-9 * (1.0 + sse(&ys))),
                Some(other) => prop_assert!(false, "unexpected split {:?}", other),
            }
        }
    }

    fn cloud(n: usize, seed: u64) -> TabularDataset {
        crate::dataset::make_synthetic_transfer(n, 0, 3, 1.0, 0.0, seed).unwrap().0
    }

    #[test]
    fn inbag_fraction_near_one_minus_inv_e() {
        let d = cloud(1000, 4);
        let e = fit_ensemble(&d, &EnsembleConfig::default(), 11).unwrap();
        let mean = (0..e.n_trees()).map(|t| e.inbag_set(t).len()).sum::<usize>() as f64
            / (e.n_trees() * 1000) as f64;
        assert!((0.60..=0.66).contains(&mean), "{mean}");
        for t in 0..e.n_trees() {
            assert_eq!(e.inbag_multiset(t).len(), 1000);
        }
        let oob_mean = (0..1000)
            .map(|p| e.partition_position(p).1.len())
            .sum::<usize>() as f64
            / 1000.0;
        assert!((oob_mean - 100.0 / std::f64::consts::E).abs() < 1.5, "{oob_mean}");
    }

    #[test]
    fn ensemble_is_deterministic_and_thread_independent() {
        let d = cloud(200, 5);
        let cfg = EnsembleConfig {
            n_trees: 20,
            ..EnsembleConfig::default()
        };
        let a = fit_ensemble(&d, &cfg, 3).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| fit_ensemble(&d, &cfg, 3).unwrap());
        assert_eq!(a, b);
        let pa = a.predict_matrix(&d).unwrap();
        let pb = b.predict_matrix(&d).unwrap();
        assert_eq!(pa, pb);
    }

    #[test]
    fn single_tree_ensemble_matches_tree() {
        let d = cloud(100, 6);
        let cfg = EnsembleConfig {
            n_trees: 1,
            ..EnsembleConfig::default()
        };
        let e = fit_ensemble(&d, &cfg, 8).unwrap();
        assert_eq!(e.predict_mean(&d).unwrap(), e.trees()[0].predict(&d));
    }

    #[test]
    fn mean_is_column_mean_and_order_invariant() {
        let d = cloud(80, 7);
        let cfg = EnsembleConfig {
            n_trees: 7,
            ..EnsembleConfig::default()
        };
        let mut e = fit_ensemble(&d, &cfg, 8).unwrap();
        let p = e.predict_matrix(&d).unwrap();
        let mean = e.predict_mean(&d).unwrap();
        for j in 0..d.n_rows() {
            assert!((mean[j] - p.column(j).mean()).abs() < 1e-12);
        }
        e.trees.reverse();
        e.inbag.reverse();
        let rev = e.predict_mean(&d).unwrap();
        for (a, b) in mean.iter().zip(&rev) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn unpruned_tree_reproduces_isolated_training_point() {
        let d = one_d(&[0.0, 1.0, 2.0, 3.0, 4.0], &[3.0, -1.0, 4.0, 1.0, 5.0]);
        let t = fit_tree(&d, &all_ids(&d), TreeLimits::default(), 2).unwrap();
        assert_eq!(t.predict(&d), d.target().unwrap());
    }

    #[test]
    fn empty_probe_set_gives_empty_matrix() {
        let d = cloud(30, 1);
        let cfg = EnsembleConfig {
            n_trees: 3,
            ..EnsembleConfig::default()
        };
        let e = fit_ensemble(&d, &cfg, 0).unwrap();
        let p = e.predict_matrix(&d.subset(&[])).unwrap();
        assert_eq!(p.shape(), (3, 0));
    }

    #[test]
    fn schema_mismatch_rejected() {
        let d = cloud(30, 1);
        let e = fit_ensemble(&d, &EnsembleConfig { n_trees: 2, ..Default::default() }, 0).unwrap();
        let other = one_d(&[1.0], &[1.0]);
        assert!(matches!(e.predict_matrix(&other), Err(Error::SchemaMismatch(_))));
    }

    #[test]
    fn partition_is_disjoint_cover() {
        let d = cloud(50, 2);
        let e = fit_ensemble(&d, &EnsembleConfig { n_trees: 30, ..Default::default() }, 4).unwrap();
        for &id in d.row_ids() {
            let (ib, oob) = e.partition_membership(id).unwrap();
            assert_eq!(ib.len() + oob.len(), 30);
            assert!(ib.iter().all(|t| !oob.contains(t)));
            for &t in &ib {
                assert!(e.inbag_set(t).contains(&id));
            }
        }
        assert!(matches!(e.partition_membership(999), Err(Error::UnknownRowId(999))));
    }

    #[test]
    fn without_bootstrap_every_row_is_inbag_everywhere() {
        let d = cloud(20, 2);
        let cfg = EnsembleConfig {
            n_trees: 4,
            bootstrap: false,
            ..EnsembleConfig::default()
        };
        let e = fit_ensemble(&d, &cfg, 4).unwrap();
        let (_, oob) = e.partition_membership(0).unwrap();
        assert!(oob.is_empty());
    }

    #[test]
    fn json_round_trip_preserves_predictions() {
        let d = cloud(60, 9);
        let e = fit_ensemble(&d, &EnsembleConfig { n_trees: 5, ..Default::default() }, 1).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        e.save_json(f.path()).unwrap();
        let back = BaggedEnsemble::load_json(f.path()).unwrap();
        assert_eq!(e, back);
        assert_eq!(e.predict_matrix(&d).unwrap(), back.predict_matrix(&d).unwrap());
    }

    #[test]
    fn availability_probability() {
        let p = min_ensemble_size_check(50, 1_000_000);
        assert!((0.9e-4..=1.3e-4).contains(&p), "{p}");
        assert_eq!(min_ensemble_size_check(0, 10), 1.0);
        assert_eq!(min_ensemble_size_check(10, 0), 0.0);
        // Direct evaluation where it is well conditioned.
        let direct = 1.0 - (1.0 - (1.0 - (-1.0f64).exp()).powi(3)).powi(5);
        assert!((min_ensemble_size_check(3, 5) - direct).abs() < 1e-14);
    }
}
