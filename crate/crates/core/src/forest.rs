//! Regression forests grown by log-variance reduction.
//!
//! Each tree is stored as a flat node array with the root at index 0 and
//! children always at higher indices, so every path terminates.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const VARIANCE_FLOOR: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TreeNode {
    /// `x[feature] <= threshold` goes left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { value: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn new(nodes: Vec<TreeNode>, feature_dim: usize) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::CorruptModel("tree has no nodes".into()));
        }
        for (i, node) in nodes.iter().enumerate() {
            match *node {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if feature >= feature_dim || !threshold.is_finite() {
                        return Err(Error::CorruptModel(format!("bad split at node {i}")));
                    }
                    if left <= i || right <= i || left >= nodes.len() || right >= nodes.len() {
                        return Err(Error::CorruptModel(format!("bad child index at node {i}")));
                    }
                }
                TreeNode::Leaf { value } => {
                    if !value.is_finite() {
                        return Err(Error::CorruptModel(format!("non-finite leaf at node {i}")));
                    }
                }
            }
        }
        Ok(Self { nodes })
    }

    /// A single-leaf tree.
    pub fn constant(value: f64) -> Self {
        Self {
            nodes: vec![TreeNode::Leaf { value }],
        }
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub min_leaf: usize,
    /// Candidate features per node; `None` means `ceil(sqrt(d))`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    /// Bootstrap sample size as a fraction of `n`.
    pub sample_fraction: f64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 2000,
            min_leaf: 5,
            max_features: None,
            bootstrap: true,
            sample_fraction: 1.0,
        }
    }
}

impl ForestParams {
    pub fn with_trees(n_trees: usize) -> Self {
        Self {
            n_trees,
            ..Self::default()
        }
    }

    fn candidates(&self, d: usize) -> usize {
        self.max_features
            .unwrap_or_else(|| (d as f64).sqrt().ceil() as usize)
            .clamp(1, d)
    }

    fn validate(&self) -> Result<()> {
        if self.n_trees < 1 {
            return Err(Error::InvalidParameter("forest needs at least one tree".into()));
        }
        if self.min_leaf < 1 {
            return Err(Error::InvalidParameter("min leaf size must be at least 1".into()));
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "sample fraction {} outside (0, 1]",
                self.sample_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    trees: Vec<Tree>,
    feature_dim: usize,
}

impl Forest {
    pub fn new(trees: Vec<Tree>, feature_dim: usize) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::CorruptModel("forest has no trees".into()));
        }
        let trees = trees
            .into_iter()
            .map(|t| Tree::new(t.nodes, feature_dim))
            .collect::<Result<_>>()?;
        Ok(Self { trees, feature_dim })
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        check_input(x, self.feature_dim)?;
        Ok(self.predict_unchecked(x))
    }

    fn predict_unchecked(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}

fn check_input(x: &[f64], d: usize) -> Result<()> {
    if x.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: x.len(),
        });
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("input feature {i}")));
    }
    Ok(())
}

pub fn predict_forest(forest: &Forest, x: &[f64]) -> Result<f64> {
    forest.predict(x)
}

/// A forest plus, for every training row, the mean prediction of the trees
/// that did not see it.
#[derive(Clone, Debug)]
pub struct TrainedForest {
    pub forest: Forest,
    /// `None` when the row was in every tree's sample.
    pub oob: Vec<Option<f64>>,
}

impl TrainedForest {
    /// Out-of-bag predictions, falling back to the in-sample prediction for
    /// rows that no tree left out.
    pub fn oob_or_in_sample(&self, x: &[Vec<f64>]) -> Vec<f64> {
        self.oob
            .iter()
            .zip(x)
            .map(|(o, row)| o.unwrap_or_else(|| self.forest.predict_unchecked(row)))
            .collect()
    }
}

pub fn train_forest(x: &[Vec<f64>], y: &[f64], params: &ForestParams, seed: u64) -> Result<Forest> {
    Ok(train_forest_oob(x, y, params, seed)?.forest)
}

/// Trees are grown in parallel; tree `j` draws from ChaCha stream `j` of
/// `seed`, so the result does not depend on the thread count.
pub fn train_forest_oob(
    x: &[Vec<f64>],
    y: &[f64],
    params: &ForestParams,
    seed: u64,
) -> Result<TrainedForest> {
    params.validate()?;
    let n = x.len();
    if n == 0 {
        return Err(Error::InsufficientData("no training rows".into()));
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: y.len(),
        });
    }
    if n < 2 * params.min_leaf {
        return Err(Error::InsufficientData(format!(
            "{n} rows; need at least {} for min leaf size {}",
            2 * params.min_leaf,
            params.min_leaf
        )));
    }
    let d = x[0].len();
    if d == 0 {
        return Err(Error::InvalidDimensions("zero-length feature rows".into()));
    }
    for row in x {
        check_input(row, d)?;
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training target".into()));
    }

    let grown: Vec<(Tree, Vec<bool>)> = (0..params.n_trees)
        .into_par_iter()
        .map(|j| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(j as u64);
            let sample_size = ((params.sample_fraction * n as f64).round() as usize).max(1);
            let mut in_bag = vec![false; n];
            let rows: Vec<usize> = if params.bootstrap {
                (0..sample_size).map(|_| rng.random_range(0..n)).collect()
            } else if sample_size < n {
                sample_indices(&mut rng, n, sample_size).into_vec()
            } else {
                (0..n).collect()
            };
            rows.iter().for_each(|&r| in_bag[r] = true);
            let tree = Grower {
                x,
                y,
                params,
                d,
                nodes: Vec::new(),
            }
            .grow(rows, &mut rng);
            (tree, in_bag)
        })
        .collect();

    let mut sums = vec![0.0; n];
    let mut counts = vec![0usize; n];
    for (tree, in_bag) in &grown {
        for i in (0..n).filter(|&i| !in_bag[i]) {
            sums[i] += tree.predict(&x[i]);
            counts[i] += 1;
        }
    }
    let oob = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
        .collect();
    Ok(TrainedForest {
        forest: Forest {
            trees: grown.into_iter().map(|(t, _)| t).collect(),
            feature_dim: d,
        },
        oob,
    })
}

struct Grower<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    params: &'a ForestParams,
    d: usize,
    nodes: Vec<TreeNode>,
}

struct SplitChoice {
    score: f64,
    feature: usize,
    threshold: f64,
}

/// `n ln v - nL ln vL - nR ln vR` with every variance floored.
pub fn split_score(n: usize, var: f64, nl: usize, var_l: f64, nr: usize, var_r: f64) -> f64 {
    let lv = |v: f64| v.max(VARIANCE_FLOOR).ln();
    n as f64 * lv(var) - nl as f64 * lv(var_l) - nr as f64 * lv(var_r)
}

fn variance(sum: f64, sum_sq: f64, n: usize) -> f64 {
    let m = sum / n as f64;
    (sum_sq / n as f64 - m * m).max(0.0)
}

impl Grower<'_> {
    fn grow(mut self, rows: Vec<usize>, rng: &mut ChaCha8Rng) -> Tree {
        self.build(rows, rng);
        Tree { nodes: self.nodes }
    }

    fn build(&mut self, rows: Vec<usize>, rng: &mut ChaCha8Rng) -> usize {
        let id = self.nodes.len();
        let n = rows.len();
        let mean = rows.iter().map(|&r| self.y[r]).sum::<f64>() / n as f64;
        self.nodes.push(TreeNode::Leaf { value: mean });
        let pure = rows.iter().all(|&r| self.y[r] == self.y[rows[0]]);
        if pure || n < 2 * self.params.min_leaf {
            return id;
        }
        let Some(choice) = self.best_split(&rows, rng) else {
            return id;
        };
        let (left, right): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&r| self.x[r][choice.feature] <= choice.threshold);
        let l = self.build(left, rng);
        let r = self.build(right, rng);
        self.nodes[id] = TreeNode::Split {
            feature: choice.feature,
            threshold: choice.threshold,
            left: l,
            right: r,
        };
        id
    }

    /// Tries a random candidate subset first; if none of those features can
    /// split the node with positive score, the remaining features are tried.
    fn best_split(&self, rows: &[usize], rng: &mut ChaCha8Rng) -> Option<SplitChoice> {
        let k = self.params.candidates(self.d);
        let mut order: Vec<usize> = sample_indices(rng, self.d, self.d).into_vec();
        let (first, rest) = order.split_at_mut(k);
        first.sort_unstable();
        rest.sort_unstable();
        self.best_among(rows, first)
            .or_else(|| self.best_among(rows, rest))
    }

    fn best_among(&self, rows: &[usize], features: &[usize]) -> Option<SplitChoice> {
        let n = rows.len();
        let min_leaf = self.params.min_leaf;
        let total: f64 = rows.iter().map(|&r| self.y[r]).sum();
        let total_sq: f64 = rows.iter().map(|&r| self.y[r] * self.y[r]).sum();
        let var = variance(total, total_sq, n);
        let mut best: Option<SplitChoice> = None;
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
        for &f in features {
            pairs.clear();
            pairs.extend(rows.iter().map(|&r| (self.x[r][f], self.y[r])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (mut sl, mut sql) = (0.0, 0.0);
            for i in 0..n - 1 {
                sl += pairs[i].1;
                sql += pairs[i].1 * pairs[i].1;
                let nl = i + 1;
                let nr = n - nl;
                if nl < min_leaf || nr < min_leaf || pairs[i].0 == pairs[i + 1].0 {
                    continue;
                }
                let score = split_score(
                    n,
                    var,
                    nl,
                    variance(sl, sql, nl),
                    nr,
                    variance(total - sl, total_sq - sql, nr),
                );
                if score > 0.0 && best.as_ref().is_none_or(|b| score > b.score) {
                    let (a, b) = (pairs[i].0, pairs[i + 1].0);
                    let mid = a + (b - a) / 2.0;
                    best = Some(SplitChoice {
                        score,
                        feature: f,
                        threshold: if mid < b { mid } else { a },
                    });
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::spearman;
    use proptest::prelude::*;

    fn grid(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect()
    }

    #[test]
    fn constant_targets() {
        let x = grid(40, 4, 1);
        let f = train_forest(&x, &[6.5; 40], &ForestParams::with_trees(10), 3).unwrap();
        for row in grid(10, 4, 2) {
            assert_eq!(f.predict(&row).unwrap(), 6.5);
        }
        assert!(f.trees().iter().all(|t| t.nodes().len() == 1));
    }

    #[test]
    fn fully_grown_tree_memorizes() {
        let x = grid(60, 3, 4);
        let y: Vec<f64> = (0..60).map(|i| (i * 37 % 61) as f64 / 6.0).collect();
        let params = ForestParams {
            n_trees: 1,
            min_leaf: 1,
            bootstrap: false,
            ..Default::default()
        };
        let f = train_forest(&x, &y, &params, 9).unwrap();
        for (row, &t) in x.iter().zip(&y) {
            assert_eq!(f.predict(row).unwrap(), t);
        }
    }

    #[test]
    fn averaging_and_constant_trees() {
        let f = Forest::new(vec![Tree::constant(5.0); 3], 2).unwrap();
        assert_eq!(predict_forest(&f, &[0.0, 1.0]).unwrap(), 5.0);
        let f = Forest::new(vec![Tree::constant(2.0), Tree::constant(4.0)], 1).unwrap();
        assert_eq!(predict_forest(&f, &[0.0]).unwrap(), 3.0);
        assert!(matches!(
            f.predict(&[0.0, 1.0]),
            Err(Error::DimensionMismatch { expected: 1, actual: 2 })
        ));
        assert!(matches!(f.predict(&[f64::NAN]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn hand_traced_depth_two_forest() {
        let split = |feature, threshold, left, right| TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        };
        let leaf = |value| TreeNode::Leaf { value };
        let a = Tree::new(
            vec![split(0, 0.5, 1, 4), split(1, -1.0, 2, 3), leaf(1.0), leaf(2.0), leaf(9.0)],
            2,
        )
        .unwrap();
        let b = Tree::new(vec![split(1, 0.0, 1, 2), leaf(4.0), split(0, 2.0, 3, 4), leaf(6.0), leaf(8.0)], 2).unwrap();
        let f = Forest::new(vec![a, b], 2).unwrap();
        // (0.2, 0.3): a -> left, y > -1 -> 2.0; b -> right, x <= 2 -> 6.0
        assert_eq!(f.predict(&[0.2, 0.3]).unwrap(), 4.0);
        // (0.5, -1.0): ties go left in both trees
        assert_eq!(f.predict(&[0.5, -1.0]).unwrap(), 2.5);
        assert_eq!(f.predict(&[3.0, 1.0]).unwrap(), 8.5);
        assert_eq!(f.trees()[0].depth(), 2);
    }

    #[test]
    fn trained_forest_matches_manual_trace() {
        let x = grid(80, 3, 5);
        let y: Vec<f64> = x.iter().map(|r| r[0] * r[0] + r[2]).collect();
        let params = ForestParams {
            n_trees: 4,
            min_leaf: 10,
            ..Default::default()
        };
        let f = train_forest(&x, &y, &params, 1).unwrap();
        let probe = [0.3, -1.2, 2.0];
        let manual: f64 = f
            .trees()
            .iter()
            .map(|t| {
                let mut i = 0;
                loop {
                    match t.nodes()[i] {
                        TreeNode::Leaf { value } => break value,
                        TreeNode::Split { feature, threshold, left, right } => {
                            i = if probe[feature] <= threshold { left } else { right }
                        }
                    }
                }
            })
            .sum::<f64>()
            / 4.0;
        assert_eq!(f.predict(&probe).unwrap(), manual);
    }

    #[test]
    fn learns_a_sine() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut make = |n: usize| {
            let x: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..5).map(|_| rng.random_range(-3.0..3.0)).collect())
                .collect();
            let y: Vec<f64> = x
                .iter()
                .map(|r| r[0].sin() + 0.1 * rng.random_range(-1.0..1.0))
                .collect();
            (x, y)
        };
        let (x, y) = make(500);
        let (xt, _) = make(200);
        let f = train_forest(&x, &y, &ForestParams::with_trees(100), 11).unwrap();
        let pred: Vec<f64> = xt.iter().map(|r| f.predict(r).unwrap()).collect();
        let truth: Vec<f64> = xt.iter().map(|r| r[0].sin()).collect();
        let rho = spearman(&pred, &truth).unwrap();
        assert!(rho > 0.9, "{rho}");
    }

    #[test]
    fn deterministic_and_oob() {
        let x = grid(50, 6, 8);
        let y: Vec<f64> = x.iter().map(|r| r[1] - r[3]).collect();
        let p = ForestParams::with_trees(30);
        let a = train_forest_oob(&x, &y, &p, 42).unwrap();
        let b = train_forest_oob(&x, &y, &p, 42).unwrap();
        assert_eq!(a.forest, b.forest);
        assert_eq!(a.oob, b.oob);
        assert!(a.oob.iter().all(|o| o.is_some()));
        assert_ne!(a.forest, train_forest(&x, &y, &p, 43).unwrap());
    }

    #[test]
    fn rejects_bad_input() {
        let x = grid(8, 2, 1);
        let y = vec![1.0; 8];
        assert!(matches!(
            train_forest(&x, &y, &ForestParams::with_trees(1), 0),
            Err(Error::InsufficientData(_))
        ));
        assert!(train_forest(&[], &[], &ForestParams::default(), 0).is_err());
        assert!(train_forest(&x, &y, &ForestParams { n_trees: 0, min_leaf: 1, ..Default::default() }, 0).is_err());
        let broken = vec![TreeNode::Split { feature: 0, threshold: 0.0, left: 0, right: 0 }];
        assert!(Tree::new(broken, 1).is_err());
    }

    #[test]
    fn chosen_split_reduces_log_variance() {
        assert!(split_score(4, 1.0, 2, 0.0, 2, 0.0) > 0.0);
        assert!(split_score(4, 0.25, 2, 0.25, 2, 0.25).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn predictions_stay_in_target_range(seed in 0u64..1000, probe in prop::collection::vec(-10.0f64..10.0, 3)) {
            let x = grid(40, 3, seed);
            let y: Vec<f64> = x.iter().map(|r| (r[0] * 2.0 + r[1]).clamp(0.0, 10.0)).collect();
            let params = ForestParams { n_trees: 8, min_leaf: 2, ..Default::default() };
            let f = train_forest(&x, &y, &params, seed).unwrap();
            let lo = y.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let p = f.predict(&probe).unwrap();
            prop_assert!(p >= lo - 1e-12 && p <= hi + 1e-12);
        }
    }
}
