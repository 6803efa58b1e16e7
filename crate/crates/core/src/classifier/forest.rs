use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{argmax_lowest, check_training_data, DecisionTree, TreeConfig};
use crate::error::{Error, Result};
use crate::seed::fingerprint;

/// Random-forest settings; the defaults mirror common library defaults
/// (100 trees, Gini, ⌈√m⌉ features, bootstrap, unlimited depth, leaf size 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub bootstrap: bool,
    pub tree: TreeConfig,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { n_trees: 100, bootstrap: true, tree: TreeConfig::default() }
    }
}

impl ForestConfig {
    pub fn fingerprint(&self) -> String {
        fingerprint(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<DecisionTree>,
    pub feature_names: Vec<String>,
    pub class_labels: Vec<String>,
    pub config_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: usize,
    /// Fraction of trees voting for each class.
    pub votes: Vec<f64>,
}

/// Tree `i` draws from stream `i` of the ChaCha generator seeded with
/// `seed`, so tree 0 without bootstrap equals [`super::train_tree`] with the
/// same seed, and the result does not depend on thread scheduling.
pub fn train_forest(
    rows: &[Vec<f64>],
    labels: &[usize],
    class_labels: &[String],
    feature_names: &[String],
    config: &ForestConfig,
    seed: u64,
) -> Result<Forest> {
    let n_classes = class_labels.len();
    let m = check_training_data(rows, labels, n_classes)?;
    if feature_names.len() != m {
        return Err(Error::Dimension(format!("{} feature names for {m} features", feature_names.len())));
    }
    if config.n_trees == 0 {
        return Err(Error::Config("forest needs at least one tree".into()));
    }
    let n = rows.len();
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let samples: Vec<usize> =
                if config.bootstrap { (0..n).map(|_| rng.gen_range(0..n)).collect() } else { (0..n).collect() };
            DecisionTree::grow(rows, labels, n_classes, samples, &config.tree, &mut rng)
        })
        .collect();
    Ok(Forest {
        trees,
        feature_names: feature_names.to_vec(),
        class_labels: class_labels.to_vec(),
        config_fingerprint: config.fingerprint(),
    })
}

impl Forest {
    /// Majority vote over trees; ties go to the lowest class index.
    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        if x.len() != self.feature_names.len() {
            return Err(Error::Dimension(format!(
                "expected {} features, got {}",
                self.feature_names.len(),
                x.len()
            )));
        }
        let mut counts = vec![0usize; self.class_labels.len()];
        for t in &self.trees {
            counts[t.predict(x)] += 1;
        }
        let total = self.trees.len() as f64;
        let class = argmax_lowest(counts.iter().map(|&c| c as f64));
        Ok(Prediction { class, votes: counts.iter().map(|&c| c as f64 / total).collect() })
    }
}

pub fn predict(forest: &Forest, x: &[f64]) -> Result<Prediction> {
    forest.predict(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::tree::{train_tree, Node};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn names(k: usize, prefix: &str) -> Vec<String> {
        (0..k).map(|i| format!("{prefix}{i}")).collect()
    }

    fn blobs(n: usize, shift: f64, dims: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = crate::seed::rng(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let c = i % 2;
            rows.push((0..dims).map(|_| c as f64 * shift + rng.sample::<f64, _>(StandardNormal)).collect());
            labels.push(c);
        }
        (rows, labels)
    }

    fn accuracy(f: &Forest, rows: &[Vec<f64>], labels: &[usize]) -> f64 {
        rows.iter().zip(labels).filter(|(r, l)| f.predict(r).unwrap().class == **l).count() as f64 / rows.len() as f64
    }

    #[test]
    fn single_tree_without_bootstrap_equals_train_tree() {
        let (rows, labels) = blobs(80, 1.0, 5, 1);
        let cfg = ForestConfig { n_trees: 1, bootstrap: false, ..ForestConfig::default() };
        let f = train_forest(&rows, &labels, &names(2, "c"), &names(5, "f"), &cfg, 42).unwrap();
        let t = train_tree(&rows, &labels, 2, &cfg.tree, 42).unwrap();
        assert_eq!(f.trees[0], t);
    }

    #[test]
    fn shifted_blobs_are_separable() {
        let (train, tl) = blobs(400, 2.0, 6, 2);
        let (test, el) = blobs(400, 2.0, 6, 3);
        let f = train_forest(&train, &tl, &names(2, "c"), &names(6, "f"), &ForestConfig::default(), 7).unwrap();
        assert!(accuracy(&f, &test, &el) >= 0.95);
    }

    #[test]
    fn shuffled_labels_are_at_chance() {
        let mut accs = Vec::new();
        for rep in 0..50u64 {
            let (train, _) = blobs(100, 0.0, 3, 100 + rep);
            let (test, _) = blobs(100, 0.0, 3, 200 + rep);
            let mut rng = crate::seed::rng(300 + rep);
            let tl: Vec<usize> = (0..100).map(|_| rng.gen_range(0..2)).collect();
            let el: Vec<usize> = (0..100).map(|_| rng.gen_range(0..2)).collect();
            let cfg = ForestConfig { n_trees: 20, ..ForestConfig::default() };
            let f = train_forest(&train, &tl, &names(2, "c"), &names(3, "f"), &cfg, rep).unwrap();
            accs.push(accuracy(&f, &test, &el));
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        assert!((mean - 0.5).abs() < 0.10, "{mean}");
    }

    #[test]
    fn votes_and_ties() {
        let (rows, labels) = blobs(60, 3.0, 2, 4);
        let f = train_forest(&rows, &labels, &names(2, "c"), &names(2, "f"), &ForestConfig::default(), 1).unwrap();
        let p = f.predict(&rows[0]).unwrap();
        assert!((p.votes.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let leaf = |c: usize| DecisionTree::from_nodes(vec![Node::Leaf { counts: if c == 0 { vec![1, 0] } else { vec![0, 1] } }], 2, 1);
        let tie = Forest {
            trees: vec![leaf(1), leaf(0)],
            feature_names: names(1, "f"),
            class_labels: names(2, "c"),
            config_fingerprint: String::new(),
        };
        let p = tie.predict(&[0.0]).unwrap();
        assert_eq!(p.class, 0);
        assert_eq!(p.votes, vec![0.5, 0.5]);
        let agree = Forest { trees: vec![leaf(1), leaf(1)], ..tie.clone() };
        assert_eq!(agree.predict(&[0.0]).unwrap().votes, vec![0.0, 1.0]);
        assert!(tie.predict(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn same_seed_same_forest() {
        let (rows, labels) = blobs(100, 1.0, 4, 5);
        let cfg = ForestConfig { n_trees: 10, ..ForestConfig::default() };
        let a = train_forest(&rows, &labels, &names(2, "c"), &names(4, "f"), &cfg, 3).unwrap();
        let b = train_forest(&rows, &labels, &names(2, "c"), &names(4, "f"), &cfg, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn monotone_feature_transform_keeps_predictions() {
        // thresholds sit between training values, so compare on the training points
        let (rows, labels) = blobs(150, 1.0, 3, 6);
        let warp = |rows: &[Vec<f64>]| -> Vec<Vec<f64>> {
            rows.iter().map(|r| vec![r[0], r[1].exp(), r[2]]).collect()
        };
        let cfg = ForestConfig { n_trees: 15, ..ForestConfig::default() };
        let a = train_forest(&rows, &labels, &names(2, "c"), &names(3, "f"), &cfg, 9).unwrap();
        let b = train_forest(&warp(&rows), &labels, &names(2, "c"), &names(3, "f"), &cfg, 9).unwrap();
        for (x, xw) in rows.iter().zip(warp(&rows)) {
            assert_eq!(a.predict(x).unwrap().class, b.predict(&xw).unwrap().class);
        }
    }
}
