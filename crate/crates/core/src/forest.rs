//! Random forest of CART trees (Gini impurity, majority vote).
//!
//! Splits take the form `x[feature] <= threshold` where the threshold is an
//! observed training value, so tree structure depends only on the order of
//! each feature's values. Applying a strictly increasing transform to a
//! feature at both fit and predict time therefore leaves every prediction
//! unchanged.

use crate::label::Label;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("gini impurity of an empty node")]
    EmptyNode,
    #[error("training set needs both classes (normal = {normal}, abnormal = {abnormal})")]
    DegenerateTrainingSet { normal: usize, abnormal: usize },
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite feature value")]
    NonFinite,
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub label: Label,
}

impl LabeledSample {
    pub fn new(features: Vec<f64>, label: Label) -> Self {
        Self { features, label }
    }
}

/// Number of features examined at each split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSubsample {
    /// ceil(sqrt(D))
    Sqrt,
    All,
    Count(usize),
}

impl FeatureSubsample {
    pub fn resolve(self, dim: usize) -> usize {
        let k = match self {
            FeatureSubsample::Sqrt => (dim as f64).sqrt().ceil() as usize,
            FeatureSubsample::All => dim,
            FeatureSubsample::Count(k) => k,
        };
        k.clamp(1, dim.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub max_features: FeatureSubsample,
    /// Verdict when the vote (or a leaf's class counts) is split evenly.
    pub tie_break: Label,
    /// Draw a same-size bootstrap resample for each tree.
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_estimators: 40,
            max_depth: 16,
            min_samples_split: 2,
            max_features: FeatureSubsample::Sqrt,
            tie_break: Label::Abnormal,
            bootstrap: true,
        }
    }
}

/// Gini impurity `1 - sum_i (c_i / n)^2` of a (normal, abnormal) count pair.
pub fn gini(counts: [usize; 2]) -> Result<f64, ForestError> {
    let n = counts[0] + counts[1];
    if n == 0 {
        return Err(ForestError::EmptyNode);
    }
    Ok(gini_unchecked(counts))
}

fn gini_unchecked(counts: [usize; 2]) -> f64 {
    let n = (counts[0] + counts[1]) as f64;
    let (a, b) = (counts[0] as f64 / n, counts[1] as f64 / n);
    1.0 - a * a - b * b
}

/// A binary tree stored as parallel node arrays. Leaves have
/// `feature == -1`; internal nodes send `x[feature] <= threshold` to `left`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub feature: Vec<i64>,
    pub threshold: Vec<f64>,
    pub left: Vec<i64>,
    pub right: Vec<i64>,
    /// (normal, abnormal) training counts reaching each node
    pub counts: Vec<[usize; 2]>,
}

impl DecisionTree {
    fn empty() -> Self {
        Self { feature: vec![], threshold: vec![], left: vec![], right: vec![], counts: vec![] }
    }

    fn push_leaf(&mut self, counts: [usize; 2]) -> usize {
        self.feature.push(-1);
        self.threshold.push(0.0);
        self.left.push(-1);
        self.right.push(-1);
        self.counts.push(counts);
        self.feature.len() - 1
    }

    pub fn node_count(&self) -> usize {
        self.feature.len()
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        self.feature[node] < 0
    }

    /// Leaf reached by `x`.
    pub fn leaf_for(&self, x: &[f64]) -> usize {
        let mut node = 0;
        while !self.is_leaf(node) {
            let f = self.feature[node] as usize;
            node = if x[f] <= self.threshold[node] {
                self.left[node] as usize
            } else {
                self.right[node] as usize
            };
        }
        node
    }

    pub fn predict(&self, x: &[f64], tie_break: Label) -> Label {
        let [n, a] = self.counts[self.leaf_for(x)];
        match n.cmp(&a) {
            std::cmp::Ordering::Greater => Label::Normal,
            std::cmp::Ordering::Less => Label::Abnormal,
            std::cmp::Ordering::Equal => tie_break,
        }
    }

    /// Depth of the deepest leaf (a single leaf has depth 0).
    pub fn depth(&self) -> usize {
        fn go(t: &DecisionTree, n: usize) -> usize {
            if t.is_leaf(n) {
                0
            } else {
                1 + go(t, t.left[n] as usize).max(go(t, t.right[n] as usize))
            }
        }
        if self.node_count() == 0 {
            0
        } else {
            go(self, 0)
        }
    }

    /// Unnormalized Gini decrease per feature, `n_node * gini(node) - sum over children`.
    fn impurity_decrease(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for node in 0..self.node_count() {
            if self.is_leaf(node) {
                continue;
            }
            let weighted = |i: usize| {
                let c = self.counts[i];
                (c[0] + c[1]) as f64 * gini_unchecked(c)
            };
            let (l, r) = (self.left[node] as usize, self.right[node] as usize);
            out[self.feature[node] as usize] += weighted(node) - weighted(l) - weighted(r);
        }
        out
    }
}

/// Best axis-aligned split of `idx` on `feature`: (weighted child gini,
/// threshold). `None` when the feature is constant over the node.
fn best_split_on_feature(
    samples: &[LabeledSample],
    idx: &mut [usize],
    feature: usize,
) -> Option<(f64, f64)> {
    idx.sort_by(|&a, &b| samples[a].features[feature].total_cmp(&samples[b].features[feature]));
    let n = idx.len();
    let mut total = [0usize; 2];
    for &i in idx.iter() {
        total[samples[i].label.index()] += 1;
    }
    let mut left = [0usize; 2];
    let mut best: Option<(f64, f64)> = None;
    for k in 0..n - 1 {
        left[samples[idx[k]].label.index()] += 1;
        let here = samples[idx[k]].features[feature];
        let next = samples[idx[k + 1]].features[feature];
        if here >= next {
            continue;
        }
        let right = [total[0] - left[0], total[1] - left[1]];
        let nl = (k + 1) as f64;
        let nr = (n - k - 1) as f64;
        let score = (nl * gini_unchecked(left) + nr * gini_unchecked(right)) / n as f64;
        if best.is_none_or(|(s, _)| score < s) {
            best = Some((score, here));
        }
    }
    best
}

struct Builder<'a> {
    samples: &'a [LabeledSample],
    config: &'a ForestConfig,
    dim: usize,
    tree: DecisionTree,
}

impl Builder<'_> {
    fn grow<R: Rng>(&mut self, idx: &mut [usize], depth: usize, rng: &mut R) -> usize {
        let mut counts = [0usize; 2];
        for &i in idx.iter() {
            counts[self.samples[i].label.index()] += 1;
        }
        let node = self.tree.push_leaf(counts);
        let pure = counts[0] == 0 || counts[1] == 0;
        if pure || depth >= self.config.max_depth || idx.len() < self.config.min_samples_split.max(2)
        {
            return node;
        }

        let k = self.config.max_features.resolve(self.dim);
        let mut candidates = index::sample(rng, self.dim, k).into_vec();
        candidates.sort_unstable();
        let mut best: Option<(f64, usize, f64)> = None;
        for &f in &candidates {
            if let Some((score, thr)) = best_split_on_feature(self.samples, idx, f) {
                if best.is_none_or(|(s, _, _)| score < s) {
                    best = Some((score, f, thr));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return node;
        };

        // partition idx in place: left block first
        let mut split = 0;
        for j in 0..idx.len() {
            if self.samples[idx[j]].features[feature] <= threshold {
                idx.swap(split, j);
                split += 1;
            }
        }
        let (l_idx, r_idx) = idx.split_at_mut(split);
        let left = self.grow(l_idx, depth + 1, rng);
        let right = self.grow(r_idx, depth + 1, rng);
        self.tree.feature[node] = feature as i64;
        self.tree.threshold[node] = threshold;
        self.tree.left[node] = left as i64;
        self.tree.right[node] = right as i64;
        node
    }
}

fn validate(samples: &[LabeledSample]) -> Result<usize, ForestError> {
    let dim = samples.first().map_or(0, |s| s.features.len());
    for s in samples {
        if s.features.len() != dim {
            return Err(ForestError::DimensionMismatch { expected: dim, got: s.features.len() });
        }
        if s.features.iter().any(|v| !v.is_finite()) {
            return Err(ForestError::NonFinite);
        }
    }
    Ok(dim)
}

/// Grows one CART tree on exactly `samples` (no resampling).
pub fn build_tree<R: Rng>(
    samples: &[LabeledSample],
    config: &ForestConfig,
    rng: &mut R,
) -> Result<DecisionTree, ForestError> {
    let dim = validate(samples)?;
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    Ok(build_on(samples, &mut idx, dim, config, rng))
}

fn build_on<R: Rng>(
    samples: &[LabeledSample],
    idx: &mut [usize],
    dim: usize,
    config: &ForestConfig,
    rng: &mut R,
) -> DecisionTree {
    let mut b = Builder { samples, config, dim, tree: DecisionTree::empty() };
    if idx.is_empty() {
        b.tree.push_leaf([0, 0]);
    } else {
        b.grow(idx, 0, rng);
    }
    b.tree
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<DecisionTree>,
    pub config: ForestConfig,
    pub dim: usize,
    pub seed: u64,
}

/// (normal, abnormal) tree votes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Votes {
    pub normal: usize,
    pub abnormal: usize,
}

impl Votes {
    pub fn total(&self) -> usize {
        self.normal + self.abnormal
    }

    pub fn abnormal_fraction(&self) -> f64 {
        self.abnormal as f64 / self.total().max(1) as f64
    }
}

/// Fits `config.n_estimators` trees, each on its own bootstrap resample.
///
/// Tree `i` draws from stream `i` of a ChaCha generator keyed by `seed`, so
/// the result does not depend on how trees are scheduled across threads.
pub fn fit_forest(
    samples: &[LabeledSample],
    config: &ForestConfig,
    seed: u64,
) -> Result<Forest, ForestError> {
    let dim = validate(samples)?;
    let normal = samples.iter().filter(|s| s.label == Label::Normal).count();
    let abnormal = samples.len() - normal;
    if normal == 0 || abnormal == 0 {
        return Err(ForestError::DegenerateTrainingSet { normal, abnormal });
    }
    let n = samples.len();
    let trees = (0..config.n_estimators.max(1))
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut idx: Vec<usize> = if config.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            build_on(samples, &mut idx, dim, config, &mut rng)
        })
        .collect();
    Ok(Forest { trees, config: config.clone(), dim, seed })
}

impl Forest {
    pub fn predict(&self, features: &[f64]) -> (Label, Votes) {
        predict(self, features)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("forest serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self, ForestError> {
        serde_json::from_str(s).map_err(|e| ForestError::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), ForestError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ForestError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Majority vote; an even split goes to `config.tie_break`.
pub fn predict(forest: &Forest, features: &[f64]) -> (Label, Votes) {
    let tie = forest.config.tie_break;
    let mut votes = Votes { normal: 0, abnormal: 0 };
    for t in &forest.trees {
        match t.predict(features, tie) {
            Label::Normal => votes.normal += 1,
            Label::Abnormal => votes.abnormal += 1,
        }
    }
    let label = match votes.normal.cmp(&votes.abnormal) {
        std::cmp::Ordering::Greater => Label::Normal,
        std::cmp::Ordering::Less => Label::Abnormal,
        std::cmp::Ordering::Equal => tie,
    };
    (label, votes)
}

/// Mean decrease in Gini impurity per feature, normalized to sum to 1.
/// Each tree's decreases are normalized before averaging. A forest made
/// only of leaves yields all zeros.
pub fn feature_importances(forest: &Forest) -> Vec<f64> {
    let mut acc = vec![0.0; forest.dim];
    for t in &forest.trees {
        let dec = t.impurity_decrease(forest.dim);
        let s: f64 = dec.iter().sum();
        if s > 0.0 {
            for (a, d) in acc.iter_mut().zip(&dec) {
                *a += d / s;
            }
        }
    }
    let total: f64 = acc.iter().sum();
    if total > 0.0 {
        acc.iter_mut().for_each(|a| *a /= total);
    }
    acc
}
