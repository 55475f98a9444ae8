//! Gradient-boosted regression trees with impurity-based importance.

use serde::{Deserialize, Serialize};

use super::tree::{grow, Presorted, RegressionTree, TreeConfig};
use super::Regressor;
use crate::features::FeatureMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub shrinkage: f64,
    pub min_leaf: usize,
}

impl Default for GbtConfig {
    fn default() -> Self {
        GbtConfig {
            n_trees: 100,
            max_depth: 3,
            shrinkage: 0.1,
            min_leaf: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbtEnsemble {
    pub base_prediction: f64,
    pub shrinkage: f64,
    pub trees: Vec<RegressionTree>,
    /// Normalized per-feature impurity decrease; uniform when no tree split.
    pub importance: Vec<f64>,
}

impl GbtEnsemble {
    /// Prediction using only the first `k` trees.
    pub fn predict_row_truncated(&self, x: &[f64], k: usize) -> f64 {
        self.base_prediction + self.trees[..k.min(self.trees.len())].iter().map(|t| self.shrinkage * t.predict_row(x)).sum::<f64>()
    }

    /// Feature indices ordered by decreasing importance, ties by index.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.importance.len()).collect();
        idx.sort_by(|&a, &b| self.importance[b].total_cmp(&self.importance[a]).then(a.cmp(&b)));
        idx
    }
}

impl Regressor for GbtEnsemble {
    fn predict_row(&self, x: &[f64]) -> f64 {
        self.predict_row_truncated(x, self.trees.len())
    }
}

pub fn gbt_fit(train: &FeatureMatrix, cfg: &GbtConfig) -> GbtEnsemble {
    let n = train.n_rows();
    let p = train.n_cols();
    let base = if n == 0 { 0.0 } else { train.target.iter().sum::<f64>() / n as f64 };
    let tree_cfg = TreeConfig {
        max_depth: cfg.max_depth,
        min_leaf: cfg.min_leaf,
    };
    let data = Presorted::new(train);
    let mut current = vec![base; n];
    let mut residual = vec![0.0; n];
    let mut trees = Vec::with_capacity(cfg.n_trees);
    let mut gain = vec![0.0; p];
    for _ in 0..cfg.n_trees {
        for ((r, y), f) in residual.iter_mut().zip(&train.target).zip(&current) {
            *r = y - f;
        }
        let tree = grow(&data, &residual, &tree_cfg);
        for (g, d) in gain.iter_mut().zip(tree.feature_decrease()) {
            *g += d;
        }
        for (i, f) in current.iter_mut().enumerate() {
            *f += cfg.shrinkage * tree.predict_row(train.row(i));
        }
        trees.push(tree);
    }
    let total: f64 = gain.iter().sum();
    let importance = if total > 0.0 {
        gain.iter().map(|g| g / total).collect()
    } else {
        vec![1.0 / p.max(1) as f64; p]
    };
    GbtEnsemble {
        base_prediction: base,
        shrinkage: cfg.shrinkage,
        trees,
        importance,
    }
}
