use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Rng;

/// How many features to examine at each split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    /// ⌈√m⌉
    Sqrt,
    All,
    Count(usize),
}

impl MaxFeatures {
    pub fn resolve(self, n_features: usize) -> usize {
        let k = match self {
            MaxFeatures::Sqrt => (n_features as f64).sqrt().ceil() as usize,
            MaxFeatures::All => n_features,
            MaxFeatures::Count(c) => c,
        };
        k.clamp(1, n_features.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeConfig {
    pub max_features: MaxFeatures,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig { max_features: MaxFeatures::Sqrt, max_depth: None, min_samples_split: 2, min_samples_leaf: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf { counts: Vec<usize> },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// Binary CART tree; samples with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<Node>,
    n_classes: usize,
    n_features: usize,
}

/// Gini impurity 1 − Σ pₖ².
pub fn gini(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

/// Size-weighted Gini impurity of a two-way split.
pub fn split_gini(left: &[usize], right: &[usize]) -> f64 {
    let nl: usize = left.iter().sum();
    let nr: usize = right.iter().sum();
    let n = (nl + nr) as f64;
    (nl as f64 * gini(left) + nr as f64 * gini(right)) / n
}

/// Σₖ cₖ² / n: larger is purer. Weighted child Gini is n − Σ_children of this.
fn purity(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    counts.iter().map(|&c| (c * c) as f64).sum::<f64>() / n as f64
}

pub(crate) fn argmax_lowest(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

pub(crate) fn check_training_data(rows: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Result<usize> {
    if rows.len() < 2 || rows.len() != labels.len() {
        return Err(Error::Precondition(format!(
            "tree training needs >= 2 labelled samples, got {} rows and {} labels",
            rows.len(),
            labels.len()
        )));
    }
    let m = rows[0].len();
    if m == 0 {
        return Err(Error::Precondition("tree training needs at least one feature".into()));
    }
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::Dimension("ragged feature rows".into()));
    }
    if labels.iter().any(|&l| l >= n_classes) {
        return Err(Error::Precondition(format!("label outside 0..{n_classes}")));
    }
    Ok(m)
}

impl DecisionTree {
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }

    /// Class counts of the leaf reached by `x`.
    pub fn leaf_counts(&self, x: &[f64]) -> &[usize] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { counts } => return counts,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    /// Majority class of the reached leaf; ties go to the lowest class index.
    pub fn predict(&self, x: &[f64]) -> usize {
        argmax_lowest(self.leaf_counts(x).iter().map(|&c| c as f64))
    }

    /// Grows a tree on `samples` (indices into `rows`, repeats allowed).
    pub(crate) fn grow(
        rows: &[Vec<f64>],
        labels: &[usize],
        n_classes: usize,
        mut samples: Vec<usize>,
        config: &TreeConfig,
        rng: &mut Rng,
    ) -> DecisionTree {
        let n_features = rows[0].len();
        let max_features = config.max_features.resolve(n_features);
        let mut nodes: Vec<Node> = Vec::new();
        let mut features: Vec<usize> = (0..n_features).collect();
        let mut sorted: Vec<(f64, usize)> = Vec::with_capacity(samples.len());
        // (start, end, depth, node slot)
        let mut stack = vec![(0usize, samples.len(), 0usize, 0usize)];
        nodes.push(Node::Leaf { counts: Vec::new() });

        while let Some((start, end, depth, slot)) = stack.pop() {
            let idx = &mut samples[start..end];
            let n = idx.len();
            let mut counts = vec![0usize; n_classes];
            for &i in idx.iter() {
                counts[labels[i]] += 1;
            }
            let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
            let depth_reached = config.max_depth.is_some_and(|d| depth >= d);
            if pure || n < config.min_samples_split || n < 2 * config.min_samples_leaf || depth_reached {
                nodes[slot] = Node::Leaf { counts };
                continue;
            }

            features.shuffle(rng);
            // (score, feature, threshold)
            let mut best: Option<(f64, usize, f64)> = None;
            for (examined, &f) in features.iter().enumerate() {
                if examined >= max_features && best.is_some() {
                    break;
                }
                sorted.clear();
                sorted.extend(idx.iter().map(|&i| (rows[i][f], labels[i])));
                sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
                let mut left = vec![0usize; n_classes];
                let mut right = counts.clone();
                for pos in 1..n {
                    let (v_prev, l_prev) = sorted[pos - 1];
                    left[l_prev] += 1;
                    right[l_prev] -= 1;
                    let v = sorted[pos].0;
                    if !(v_prev < v) || pos < config.min_samples_leaf || n - pos < config.min_samples_leaf {
                        continue;
                    }
                    let score = purity(&left, pos) + purity(&right, n - pos);
                    if best.is_none_or(|b| score > b.0) {
                        let mut threshold = 0.5 * (v_prev + v);
                        if !(threshold < v) {
                            threshold = v_prev;
                        }
                        best = Some((score, f, threshold));
                    }
                }
            }

            let Some((_, feature, threshold)) = best else {
                nodes[slot] = Node::Leaf { counts };
                continue;
            };
            // partition in place: left block first
            let mut split = 0;
            for j in 0..n {
                if rows[idx[j]][feature] <= threshold {
                    idx.swap(split, j);
                    split += 1;
                }
            }
            let left = nodes.len();
            nodes.push(Node::Leaf { counts: Vec::new() });
            let right = nodes.len();
            nodes.push(Node::Leaf { counts: Vec::new() });
            nodes[slot] = Node::Split { feature, threshold, left, right };
            stack.push((start + split, end, depth + 1, right));
            stack.push((start, start + split, depth + 1, left));
        }
        DecisionTree { nodes, n_classes, n_features }
    }
}

/// Trains one CART tree on all rows.
pub fn train_tree(
    rows: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    config: &TreeConfig,
    seed: u64,
) -> Result<DecisionTree> {
    check_training_data(rows, labels, n_classes)?;
    let mut rng = crate::seed::rng(seed);
    Ok(DecisionTree::grow(rows, labels, n_classes, (0..rows.len()).collect(), config, &mut rng))
}

#[cfg(test)]
impl DecisionTree {
    pub(crate) fn from_nodes(nodes: Vec<Node>, n_classes: usize, n_features: usize) -> Self {
        DecisionTree { nodes, n_classes, n_features }
    }
}
