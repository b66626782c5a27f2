//! Bounded random forest.
//!
//! Breiman-style forest kept deliberately small: a fixed number of
//! estimators (51 by default) with a hard depth cap (15), Gini-impurity
//! greedy splits over a random feature subset per node, and bootstrap
//! resampling. Everything is deterministic given the seed: per-tree RNG
//! streams derive from `(seed, tree_index)`, split thresholds are
//! midpoints between consecutive distinct values, and equal-gain ties go
//! to the lowest feature index, then the lowest threshold.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::parallel::parallel_map;
use crate::{Error, Result};

/// How many features each split considers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSubset {
    /// `floor(sqrt(feature_dim))`, the Breiman default.
    Sqrt,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ForestConfig {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub seed: u64,
    pub features_per_split: FeatureSubset,
    pub min_samples_leaf: usize,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_estimators: 51,
            max_depth: 15,
            seed: 0,
            features_per_split: FeatureSubset::Sqrt,
            min_samples_leaf: 1,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_estimators == 0 {
            return Err(Error::InvalidConfig("n_estimators must be >= 1".into()));
        }
        if self.max_depth == 0 {
            return Err(Error::InvalidConfig("max_depth must be >= 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::InvalidConfig("min_samples_leaf must be >= 1".into()));
        }
        Ok(())
    }

    fn subset_size(&self, feature_dim: usize) -> usize {
        match self.features_per_split {
            FeatureSubset::Sqrt => ((feature_dim as f64).sqrt().floor() as usize).max(1),
            FeatureSubset::Fixed(n) => n.clamp(1, feature_dim),
        }
    }
}

/// Dense row-major feature matrix. Histogram counts convert exactly: every
/// value the featurizer can produce is far below 2^24.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn from_rows(rows: Vec<Vec<f32>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || cols == 0 {
            return Err(Error::EmptyInput);
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in &rows {
            if row.len() != cols {
                return Err(Error::shape(format!(
                    "ragged rows: {} vs {cols} columns",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(FeatureMatrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_counts(rows: &[Vec<u32>]) -> Result<Self> {
        Self::from_rows(
            rows.iter()
                .map(|r| r.iter().map(|&v| v as f32).collect())
                .collect(),
        )
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    fn at(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.cols + col]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f32,
        left: usize,
        right: usize,
    },
    Leaf {
        histogram: Vec<u32>,
    },
}

/// One decision tree as a flat node array, root at index 0, children in
/// preorder (left subtree before right).
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    /// Leaf histogram for a feature vector.
    fn leaf(&self, x: &[f32]) -> &[u32] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
                TreeNode::Leaf { histogram } => return histogram,
            }
        }
    }

    fn depth_from(&self, at: usize) -> usize {
        match &self.nodes[at] {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => {
                1 + self.depth_from(*left).max(self.depth_from(*right))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub n_classes: usize,
    pub feature_dim: usize,
    pub config: ForestConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct TreeStats {
    pub max_depth_observed: usize,
    pub total_nodes: usize,
    pub total_leaves: usize,
}

/// Candidate split for one feature: weighted child impurity and midpoint.
struct SplitCandidate {
    score: f64,
    feature: usize,
    threshold: f32,
}

fn gini(counts: &[u32], total: f64) -> f64 {
    if total == 0.0 {
        return 0.0;
    }
    let mut sum_sq = 0.0;
    for &c in counts {
        let p = c as f64 / total;
        sum_sq += p * p;
    }
    1.0 - sum_sq
}

struct TreeBuilder<'a> {
    x: &'a FeatureMatrix,
    y: &'a [usize],
    n_classes: usize,
    cfg: &'a ForestConfig,
    subset: usize,
    rng: ChaCha8Rng,
    nodes: Vec<TreeNode>,
}

impl<'a> TreeBuilder<'a> {
    fn class_counts(&self, samples: &[usize]) -> Vec<u32> {
        let mut counts = vec![0u32; self.n_classes];
        for &i in samples {
            counts[self.y[i]] += 1;
        }
        counts
    }

    /// Best valid split of `samples` on `feature`, or None when the feature
    /// is constant or every cut violates `min_samples_leaf`.
    fn best_split_on(&self, samples: &[usize], feature: usize) -> Option<SplitCandidate> {
        let mut order: Vec<(f32, usize)> = samples
            .iter()
            .map(|&i| (self.x.at(i, feature), self.y[i]))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if order[0].0 == order[order.len() - 1].0 {
            return None;
        }
        let n = order.len();
        let total = self.class_counts(samples);
        let mut left = vec![0u32; self.n_classes];
        let mut right = total;
        let msl = self.cfg.min_samples_leaf;
        let mut best: Option<SplitCandidate> = None;
        for i in 0..n - 1 {
            left[order[i].1] += 1;
            right[order[i].1] -= 1;
            if order[i].0 == order[i + 1].0 {
                continue;
            }
            let nl = i + 1;
            let nr = n - nl;
            if nl < msl || nr < msl {
                continue;
            }
            let score = (nl as f64 * gini(&left, nl as f64) + nr as f64 * gini(&right, nr as f64))
                / n as f64;
            let threshold = ((order[i].0 as f64 + order[i + 1].0 as f64) / 2.0) as f32;
            let better = match &best {
                None => true,
                Some(b) => score < b.score || (score == b.score && threshold < b.threshold),
            };
            if better {
                best = Some(SplitCandidate {
                    score,
                    feature,
                    threshold,
                });
            }
        }
        best
    }

    fn grow(&mut self, samples: Vec<usize>, depth: usize) -> usize {
        let counts = self.class_counts(&samples);
        let impurity = gini(&counts, samples.len() as f64);
        let splittable = depth < self.cfg.max_depth
            && samples.len() >= 2 * self.cfg.min_samples_leaf
            && impurity > 0.0;
        let chosen = if splittable {
            self.choose_split(&samples, impurity)
        } else {
            None
        };
        let Some(split) = chosen else {
            let at = self.nodes.len();
            self.nodes.push(TreeNode::Leaf { histogram: counts });
            return at;
        };
        let (mut ls, mut rs) = (Vec::new(), Vec::new());
        for &i in &samples {
            if self.x.at(i, split.feature) <= split.threshold {
                ls.push(i);
            } else {
                rs.push(i);
            }
        }
        let at = self.nodes.len();
        self.nodes.push(TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: 0,
            right: 0,
        });
        let left = self.grow(ls, depth + 1);
        let right = self.grow(rs, depth + 1);
        match &mut self.nodes[at] {
            TreeNode::Split {
                left: l, right: r, ..
            } => {
                *l = left;
                *r = right;
            }
            TreeNode::Leaf { .. } => unreachable!(),
        }
        at
    }

    /// Draw features in shuffled order until `subset` non-constant ones have
    /// been evaluated (or all features are exhausted), then keep the best
    /// improving split. Ties on impurity go to the lowest feature index and
    /// then the lowest threshold.
    fn choose_split(&mut self, samples: &[usize], parent_impurity: f64) -> Option<SplitCandidate> {
        let dim = self.x.n_cols();
        let mut order: Vec<usize> = (0..dim).collect();
        for i in (1..dim).rev() {
            let j = self.rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut best: Option<SplitCandidate> = None;
        let mut evaluated = 0;
        for &feature in &order {
            if evaluated >= self.subset {
                break;
            }
            let Some(cand) = self.best_split_on(samples, feature) else {
                continue; // constant on this node; draw another
            };
            evaluated += 1;
            let better = match &best {
                None => true,
                Some(b) => {
                    cand.score < b.score
                        || (cand.score == b.score
                            && (cand.feature, cand.threshold.total_cmp(&b.threshold))
                                < (b.feature, std::cmp::Ordering::Equal))
                }
            };
            if better {
                best = Some(cand);
            }
        }
        best.filter(|b| parent_impurity - b.score > 0.0)
    }
}

fn train_tree(
    x: &FeatureMatrix,
    y: &[usize],
    n_classes: usize,
    cfg: &ForestConfig,
    tree_index: usize,
) -> Tree {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&cfg.seed.to_le_bytes());
    seed[8..16].copy_from_slice(&(tree_index as u64).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(seed);
    let n = x.n_rows();
    let bootstrap: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
    let mut builder = TreeBuilder {
        x,
        y,
        n_classes,
        cfg,
        subset: cfg.subset_size(x.n_cols()),
        rng,
        nodes: Vec::new(),
    };
    builder.grow(bootstrap, 0);
    Tree {
        nodes: builder.nodes,
    }
}

/// Train with an explicit worker count; results are identical for any
/// worker count because each tree owns its RNG stream.
pub fn train_with_workers(
    features: &FeatureMatrix,
    labels: &[usize],
    cfg: &ForestConfig,
    workers: usize,
) -> Result<Forest> {
    cfg.validate()?;
    if features.n_rows() == 0 {
        return Err(Error::EmptyInput);
    }
    if labels.len() != features.n_rows() {
        return Err(Error::shape(format!(
            "{} label(s) for {} feature row(s)",
            labels.len(),
            features.n_rows()
        )));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let trees = parallel_map(cfg.n_estimators, workers, |t| {
        train_tree(features, labels, n_classes, cfg, t)
    });
    Ok(Forest {
        trees,
        n_classes,
        feature_dim: features.n_cols(),
        config: cfg.clone(),
    })
}

pub fn train(features: &FeatureMatrix, labels: &[usize], cfg: &ForestConfig) -> Result<Forest> {
    train_with_workers(features, labels, cfg, 1)
}

impl Forest {
    fn check_dim(&self, x: &[f32]) -> Result<()> {
        if x.len() != self.feature_dim {
            return Err(Error::shape(format!(
                "feature vector has {} entries, forest expects {}",
                x.len(),
                self.feature_dim
            )));
        }
        Ok(())
    }

    /// Mean of per-tree leaf class distributions; sums to 1.
    pub fn predict_proba(&self, x: &[f32]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let mut acc = vec![0.0f64; self.n_classes];
        for tree in &self.trees {
            let hist = tree.leaf(x);
            let total: u64 = hist.iter().map(|&c| c as u64).sum();
            for (a, &c) in acc.iter_mut().zip(hist) {
                *a += c as f64 / total as f64;
            }
        }
        for a in &mut acc {
            *a /= self.trees.len() as f64;
        }
        Ok(acc)
    }

    /// Argmax of [`Self::predict_proba`]; ties break to the smallest id.
    pub fn predict(&self, x: &[f32]) -> Result<usize> {
        let proba = self.predict_proba(x)?;
        let mut best = 0;
        for (c, &p) in proba.iter().enumerate() {
            if p > proba[best] {
                best = c;
            }
        }
        Ok(best)
    }

    pub fn tree_stats(&self) -> TreeStats {
        let mut stats = TreeStats {
            max_depth_observed: 0,
            total_nodes: 0,
            total_leaves: 0,
        };
        for tree in &self.trees {
            stats.total_nodes += tree.nodes.len();
            stats.total_leaves += tree
                .nodes
                .iter()
                .filter(|n| matches!(n, TreeNode::Leaf { .. }))
                .count();
            stats.max_depth_observed = stats.max_depth_observed.max(tree.depth_from(0));
        }
        stats
    }

    /// Node-array payload: per tree a u32 node count, then per node
    /// i32 feature (-1 for leaf), f32 threshold, u32 left, u32 right and
    /// u32 x n_classes leaf histogram, all little-endian.
    pub fn encode_nodes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend((self.trees.len() as u32).to_le_bytes());
        for tree in &self.trees {
            out.extend((tree.nodes.len() as u32).to_le_bytes());
            for node in &tree.nodes {
                match node {
                    TreeNode::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        out.extend((*feature as i32).to_le_bytes());
                        out.extend(threshold.to_le_bytes());
                        out.extend((*left as u32).to_le_bytes());
                        out.extend((*right as u32).to_le_bytes());
                        out.extend(std::iter::repeat_n(0u8, 4 * self.n_classes));
                    }
                    TreeNode::Leaf { histogram } => {
                        out.extend((-1i32).to_le_bytes());
                        out.extend(0f32.to_le_bytes());
                        out.extend(0u32.to_le_bytes());
                        out.extend(0u32.to_le_bytes());
                        for &c in histogram {
                            out.extend(c.to_le_bytes());
                        }
                    }
                }
            }
        }
        out
    }

    pub fn decode_nodes(
        bytes: &[u8],
        n_classes: usize,
        feature_dim: usize,
        config: ForestConfig,
    ) -> Result<Forest> {
        let mut at = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let slice = bytes
                .get(at..at + n)
                .ok_or_else(|| Error::format("forest payload truncated"))?;
            at += n;
            Ok(slice)
        };
        let read_u32 = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4-byte slice")) as usize;
        let n_trees = read_u32(take(4)?);
        let mut trees = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            let n_nodes = read_u32(take(4)?);
            let mut nodes = Vec::with_capacity(n_nodes);
            for _ in 0..n_nodes {
                let feature = i32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
                let threshold = f32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
                let left = read_u32(take(4)?);
                let right = read_u32(take(4)?);
                let hist_bytes = take(4 * n_classes)?;
                if feature < 0 {
                    let histogram = hist_bytes
                        .chunks_exact(4)
                        .map(read_u32)
                        .map(|v| v as u32)
                        .collect();
                    nodes.push(TreeNode::Leaf { histogram });
                } else {
                    if feature as usize >= feature_dim {
                        return Err(Error::format(format!(
                            "split references feature {feature} of {feature_dim}"
                        )));
                    }
                    nodes.push(TreeNode::Split {
                        feature: feature as usize,
                        threshold,
                        left,
                        right,
                    });
                }
            }
            for node in &nodes {
                if let TreeNode::Split { left, right, .. } = node {
                    if *left >= nodes.len() || *right >= nodes.len() {
                        return Err(Error::format("split child index out of range"));
                    }
                }
            }
            trees.push(Tree { nodes });
        }
        if at != bytes.len() {
            return Err(Error::format("trailing bytes after forest payload"));
        }
        Ok(Forest {
            trees,
            n_classes,
            feature_dim,
            config,
        })
    }
}
