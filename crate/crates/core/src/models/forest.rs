use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tree::{fit_classification_tree, Tree};
use super::MatchScorer;
use crate::error::{Error, Result};
use crate::pairing::PairwiseDataset;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub features_per_tree: usize,
    /// Grow each tree on a bootstrap resample; off only in tests.
    pub bootstrap: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    /// Features each tree was allowed to split on, ascending.
    pub tree_features: Vec<Vec<usize>>,
    pub n_trees: usize,
    pub features_per_tree: usize,
    pub bootstrap: bool,
    pub seed: u64,
    pub n_features: usize,
}

impl MatchScorer for ForestModel {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn score(&self, x: &[f64]) -> f64 {
        if self.trees.is_empty() {
            return 0.0;
        }
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}

pub fn train_random_forest(pairs: &PairwiseDataset, n_trees: usize, m: usize, seed_value: u64) -> Result<ForestModel> {
    train_random_forest_with(
        pairs,
        &ForestParams {
            n_trees,
            features_per_tree: m,
            bootstrap: true,
            seed: seed_value,
        },
    )
}

pub fn train_random_forest_with(pairs: &PairwiseDataset, params: &ForestParams) -> Result<ForestModel> {
    let p = pairs.n_features();
    let m = params.features_per_tree;
    if m == 0 || m > p {
        return Err(Error::invalid(format!("features per tree must be in 1..={p}, got {m}")));
    }
    if params.n_trees == 0 {
        return Err(Error::invalid("a forest needs at least one tree"));
    }
    if pairs.is_empty() || !pairs.is_labeled() {
        return Err(Error::insufficient("random forest needs labeled pairs"));
    }
    let x: Vec<Vec<bool>> = pairs.rows.iter().map(|r| r.matches.clone()).collect();
    let y = pairs.labels();
    let n = x.len();
    let mut trees = Vec::with_capacity(params.n_trees);
    let mut tree_features = Vec::with_capacity(params.n_trees);
    for t in 0..params.n_trees {
        let mut rng = seed::derived_rng(params.seed, "forest-tree", t as u64);
        let mut features = index::sample(&mut rng, p, m).into_vec();
        features.sort_unstable();
        let rows: Vec<usize> = if params.bootstrap {
            (0..n).map(|_| rng.gen_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        trees.push(fit_classification_tree(&x, &y, &rows, &features, None));
        tree_features.push(features);
    }
    Ok(ForestModel {
        trees,
        tree_features,
        n_trees: params.n_trees,
        features_per_tree: m,
        bootstrap: params.bootstrap,
        seed: params.seed,
        n_features: p,
    })
}
