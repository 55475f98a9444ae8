//! CART regression trees.
//!
//! A node `t` holding targets `y` has sum of squares
//! `R(t) = sum (y_i - mean(t))^2`; a tree's `R(T)` is the sum over leaves.
//! Nodes are split greedily on the (feature, threshold) pair with the largest
//! decrease `R(t) - R(left) - R(right)`, which for a partition of sizes
//! `nl`, `nr` and sums `sl`, `sr` equals `(nr*sl - nl*sr)^2 / (n*nl*nr)`.

use serde::{Deserialize, Serialize};

use super::Regressor;
use crate::features::FeatureMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig { max_depth: 8, min_leaf: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        n: usize,
        /// `R(t)` of this node before splitting.
        sse: f64,
        decrease: f64,
    },
    Leaf {
        value: f64,
        n: usize,
        sse: f64,
    },
}

/// Rows with `x[feature] <= threshold` go left.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub n_features: usize,
    /// Arena; the root is `nodes[0]`.
    pub nodes: Vec<Node>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    pub decrease: f64,
    pub n_left: usize,
}

impl RegressionTree {
    /// Total within-leaf sum of squares `R(T)` on the training data.
    pub fn total_sse(&self) -> f64 {
        self.nodes
            .iter()
            .map(|n| match n {
                Node::Leaf { sse, .. } => *sse,
                Node::Split { .. } => 0.0,
            })
            .sum()
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
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

    /// The root split, if the root is not a leaf.
    pub fn root_split(&self) -> Option<SplitChoice> {
        match &self.nodes[0] {
            Node::Leaf { .. } => None,
            Node::Split {
                feature,
                threshold,
                decrease,
                left,
                ..
            } => {
                let n_left = match &self.nodes[*left] {
                    Node::Leaf { n, .. } | Node::Split { n, .. } => *n,
                };
                Some(SplitChoice {
                    feature: *feature,
                    threshold: *threshold,
                    decrease: *decrease,
                    n_left,
                })
            }
        }
    }

    /// Sum of split decreases per feature.
    pub fn feature_decrease(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_features];
        for n in &self.nodes {
            if let Node::Split { feature, decrease, .. } = n {
                out[*feature] += decrease;
            }
        }
        out
    }
}

impl Regressor for RegressionTree {
    fn predict_row(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value, .. } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }
}

/// Row-major view of the design used while growing trees.
pub(crate) struct Presorted<'a> {
    x: &'a FeatureMatrix,
    /// Per feature, row indices sorted by (value, index).
    order: Vec<Vec<usize>>,
}

impl<'a> Presorted<'a> {
    pub(crate) fn new(x: &'a FeatureMatrix) -> Self {
        let order = (0..x.n_cols())
            .map(|j| {
                let col = x.column(j);
                let mut idx: Vec<usize> = (0..x.n_rows()).collect();
                idx.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Presorted { x, order }
    }
}

fn node_sse(y: &[f64], rows: &[usize]) -> (f64, f64) {
    let n = rows.len() as f64;
    let mean = rows.iter().map(|&i| y[i]).sum::<f64>() / n;
    let sse = rows.iter().map(|&i| (y[i] - mean) * (y[i] - mean)).sum();
    (mean, sse)
}

fn best_split_presorted(
    data: &Presorted<'_>,
    y: &[f64],
    rows: &[usize],
    member: &[bool],
    min_leaf: usize,
) -> Option<SplitChoice> {
    let n = rows.len();
    if n < 2 * min_leaf.max(1) {
        return None;
    }
    let total: f64 = rows.iter().map(|&i| y[i]).sum();
    let mut best: Option<SplitChoice> = None;
    let mut sorted = Vec::with_capacity(n);
    for (j, order) in data.order.iter().enumerate() {
        sorted.clear();
        sorted.extend(order.iter().copied().filter(|&i| member[i]));
        let mut left_sum = 0.0;
        for k in 1..n {
            left_sum += y[sorted[k - 1]];
            if k < min_leaf || n - k < min_leaf {
                continue;
            }
            let lo = data.x.row(sorted[k - 1])[j];
            let hi = data.x.row(sorted[k])[j];
            if lo >= hi {
                continue;
            }
            let (nl, nr) = (k as f64, (n - k) as f64);
            let right_sum = total - left_sum;
            let diff = nr * left_sum - nl * right_sum;
            let decrease = diff * diff / (n as f64 * nl * nr);
            if best.is_none_or(|b| decrease > b.decrease) {
                best = Some(SplitChoice {
                    feature: j,
                    threshold: lo + (hi - lo) / 2.0,
                    decrease,
                    n_left: k,
                });
            }
        }
    }
    best
}

/// Best split of all `x` rows against `y`, ignoring depth limits.
pub fn best_split(x: &FeatureMatrix, y: &[f64], min_leaf: usize) -> Option<SplitChoice> {
    let data = Presorted::new(x);
    let rows: Vec<usize> = (0..x.n_rows()).collect();
    best_split_presorted(&data, y, &rows, &vec![true; x.n_rows()], min_leaf)
}

pub(crate) fn grow(data: &Presorted<'_>, y: &[f64], cfg: &TreeConfig) -> RegressionTree {
    let n_rows = data.x.n_rows();
    let mut tree = RegressionTree {
        n_features: data.x.n_cols(),
        nodes: Vec::new(),
    };
    if n_rows == 0 {
        tree.nodes.push(Node::Leaf { value: 0.0, n: 0, sse: 0.0 });
        return tree;
    }
    let mut member = vec![false; n_rows];
    // (node slot, rows ascending, depth)
    let mut stack = vec![(0usize, (0..n_rows).collect::<Vec<_>>(), 0usize)];
    tree.nodes.push(Node::Leaf { value: 0.0, n: 0, sse: 0.0 });
    while let Some((slot, rows, depth)) = stack.pop() {
        let (mean, sse) = node_sse(y, &rows);
        let pure = rows.iter().all(|&i| y[i] == y[rows[0]]);
        let mut choice = None;
        if !pure && depth < cfg.max_depth {
            rows.iter().for_each(|&i| member[i] = true);
            choice = best_split_presorted(data, y, &rows, &member, cfg.min_leaf)
                .filter(|c| c.decrease > 0.0 && c.decrease > 1e-12 * sse);
            rows.iter().for_each(|&i| member[i] = false);
        }
        match choice {
            None => {
                tree.nodes[slot] = Node::Leaf {
                    value: mean,
                    n: rows.len(),
                    sse,
                }
            }
            Some(c) => {
                let (l, r): (Vec<usize>, Vec<usize>) =
                    rows.iter().partition(|&&i| data.x.row(i)[c.feature] <= c.threshold);
                let left = tree.nodes.len();
                let right = left + 1;
                tree.nodes.push(Node::Leaf { value: 0.0, n: 0, sse: 0.0 });
                tree.nodes.push(Node::Leaf { value: 0.0, n: 0, sse: 0.0 });
                tree.nodes[slot] = Node::Split {
                    feature: c.feature,
                    threshold: c.threshold,
                    left,
                    right,
                    n: rows.len(),
                    sse,
                    decrease: c.decrease,
                };
                stack.push((right, r, depth + 1));
                stack.push((left, l, depth + 1));
            }
        }
    }
    tree
}

/// Fits a tree to `y` on the rows of `x`.
pub fn fit_targets(x: &FeatureMatrix, y: &[f64], cfg: &TreeConfig) -> RegressionTree {
    grow(&Presorted::new(x), y, cfg)
}

pub fn cart_fit(train: &FeatureMatrix, cfg: &TreeConfig) -> RegressionTree {
    fit_targets(train, &train.target, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::ColumnMeta;

    fn matrix(rows: &[Vec<f64>], y: &[f64]) -> FeatureMatrix {
        let cols = (0..rows[0].len()).map(|j| ColumnMeta::numeric(format!("x{j}"))).collect();
        FeatureMatrix::from_rows(cols, rows, y.to_vec()).unwrap()
    }

    const ONE: TreeConfig = TreeConfig { max_depth: 8, min_leaf: 1 };

    #[test]
    fn two_points_exact_fit() {
        let t = cart_fit(&matrix(&[vec![0.0], vec![1.0]], &[0.0, 10.0]), &ONE);
        let s = t.root_split().unwrap();
        assert_eq!((s.feature, s.threshold), (0, 0.5));
        assert_eq!(s.decrease, 50.0);
        assert_eq!(t.predict_row(&[0.0]), 0.0);
        assert_eq!(t.predict_row(&[1.0]), 10.0);
        assert_eq!(t.total_sse(), 0.0);
    }

    #[test]
    fn constant_target_is_a_leaf() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64]).collect();
        let t = cart_fit(&matrix(&rows, &[0.1; 30]), &ONE);
        assert_eq!(t.nodes.len(), 1);
        assert!(t.root_split().is_none());
    }

    #[test]
    fn step_on_first_feature_wins_root() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, ((i * 7) % 13) as f64]).collect();
        let y: Vec<f64> = (0..20).map(|i| if i < 10 { 0.0 } else { 5.0 } + ((i * 3) % 5) as f64 * 0.01).collect();
        let t = cart_fit(&matrix(&rows, &y), &TreeConfig::default());
        let s = t.root_split().unwrap();
        assert_eq!(s.feature, 0);
        assert_eq!(s.threshold, 9.5);
    }

    #[test]
    fn ties_prefer_lowest_feature_then_threshold() {
        // Both columns carry the same ordering, and y has two symmetric cuts.
        let rows: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64, i as f64]).collect();
        let t = cart_fit(&matrix(&rows, &[0.0, 1.0, 1.0, 0.0]), &TreeConfig { max_depth: 1, min_leaf: 1 });
        let s = t.root_split().unwrap();
        assert_eq!((s.feature, s.threshold), (0, 0.5));
    }

    #[test]
    fn respects_min_leaf_and_depth() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..40).map(|i| ((i * 17) % 11) as f64).collect();
        let t = cart_fit(&matrix(&rows, &y), &TreeConfig { max_depth: 3, min_leaf: 4 });
        assert!(t.depth() <= 3);
        for n in &t.nodes {
            if let Node::Leaf { n, .. } = n {
                assert!(*n >= 4);
            }
        }
    }

    #[test]
    fn leaves_are_routed_means_and_sse_shrinks_with_depth() {
        let rows: Vec<Vec<f64>> = (0..60).map(|i| vec![(i % 12) as f64, ((i * 5) % 7) as f64]).collect();
        let y: Vec<f64> = rows.iter().map(|r| (r[0] * 0.7).sin() * 3.0 + r[1]).collect();
        let data = matrix(&rows, &y);
        let mut prev = f64::INFINITY;
        for depth in 0..8 {
            let t = cart_fit(&data, &TreeConfig { max_depth: depth, min_leaf: 2 });
            let r = t.total_sse();
            assert!(r <= prev, "depth {depth}: {r} > {prev}");
            prev = r;
            // Route every row and compare each leaf value to the mean of its rows.
            let mut sums = std::collections::BTreeMap::<u64, (f64, usize, f64)>::new();
            for (x, yv) in data.rows().zip(&y) {
                let v = t.predict_row(x);
                let e = sums.entry(v.to_bits()).or_insert((0.0, 0, v));
                e.0 += yv;
                e.1 += 1;
            }
            for (sum, n, v) in sums.values() {
                assert!((sum / *n as f64 - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn every_split_strictly_decreases() {
        let rows: Vec<Vec<f64>> = (0..80).map(|i| vec![((i * 13) % 17) as f64, ((i * 29) % 23) as f64]).collect();
        let y: Vec<f64> = (0..80).map(|i| ((i * 31) % 19) as f64).collect();
        let t = cart_fit(&matrix(&rows, &y), &ONE);
        for n in &t.nodes {
            if let Node::Split { decrease, left, right, sse, .. } = n {
                assert!(*decrease > 0.0);
                let child = |i: usize| match &t.nodes[i] {
                    Node::Leaf { sse, .. } | Node::Split { sse, .. } => *sse,
                };
                assert!(child(*left) + child(*right) < *sse);
            }
        }
    }
}
