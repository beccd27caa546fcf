//! Bagged CART regression trees with variance-reduction splits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeParams {
    pub n_trees: usize,
    pub min_leaf: usize,
    /// Draw a bootstrap sample per tree; otherwise every tree sees all rows.
    pub bootstrap: bool,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            n_trees: 30,
            min_leaf: 8,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// One regression tree stored as a flat node list; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[feature] <= threshold { left } else { right },
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
}

impl Forest {
    pub fn tree_predictions(&self, row: &[f64]) -> Vec<f64> {
        self.trees.iter().map(|t| t.predict(row)).collect()
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        self.tree_predictions(row).iter().sum::<f64>() / self.trees.len() as f64
    }
}

pub fn fit_forest(params: &TreeParams, x: &[Vec<f64>], y: &[f64], seed: u64) -> Result<Forest> {
    if params.n_trees == 0 || params.min_leaf == 0 {
        return Err(Error::InvalidArgument("n_trees and min_leaf must be positive".into()));
    }
    let n = x.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trees = (0..params.n_trees)
        .map(|_| {
            let idx: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            grow(x, y, idx, params.min_leaf)
        })
        .collect();
    Ok(Forest { trees })
}

fn grow(x: &[Vec<f64>], y: &[f64], idx: Vec<usize>, min_leaf: usize) -> Tree {
    let mut nodes = Vec::new();
    let mut stack = vec![(idx, 0usize)];
    nodes.push(Node::Leaf(0.0));
    while let Some((rows, at)) = stack.pop() {
        let mean = rows.iter().map(|&i| y[i]).sum::<f64>() / rows.len() as f64;
        match best_split(x, y, &rows, min_leaf) {
            Some((feature, threshold)) => {
                let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[i][feature] <= threshold);
                let left = nodes.len();
                nodes.push(Node::Leaf(0.0));
                let right = nodes.len();
                nodes.push(Node::Leaf(0.0));
                nodes[at] = Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
                stack.push((r, right));
                stack.push((l, left));
            }
            None => nodes[at] = Node::Leaf(mean),
        }
    }
    Tree { nodes }
}

/// Split maximizing the reduction of the sum of squared errors, with at
/// least `min_leaf` rows on each side. Ties keep the first feature and the
/// first threshold found.
fn best_split(x: &[Vec<f64>], y: &[f64], rows: &[usize], min_leaf: usize) -> Option<(usize, f64)> {
    let n = rows.len();
    if n < 2 * min_leaf {
        return None;
    }
    let total: f64 = rows.iter().map(|&i| y[i]).sum();
    let total_sq: f64 = rows.iter().map(|&i| y[i] * y[i]).sum();
    let parent_sse = total_sq - total * total / n as f64;
    if parent_sse <= 1e-12 * total_sq.max(1.0) {
        return None;
    }
    let dim = x[rows[0]].len();
    let mut best: Option<(f64, usize, f64)> = None;
    let mut order = rows.to_vec();
    for f in 0..dim {
        order.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]).then(a.cmp(&b)));
        let mut left_sum = 0.0;
        let mut left_sq = 0.0;
        for k in 0..n - 1 {
            let yi = y[order[k]];
            left_sum += yi;
            left_sq += yi * yi;
            let nl = k + 1;
            let nr = n - nl;
            if nl < min_leaf || nr < min_leaf {
                continue;
            }
            let (a, b) = (x[order[k]][f], x[order[k + 1]][f]);
            if a == b {
                continue;
            }
            let right_sum = total - left_sum;
            let right_sq = total_sq - left_sq;
            let sse = (left_sq - left_sum * left_sum / nl as f64) + (right_sq - right_sum * right_sum / nr as f64);
            let gain = parent_sse - sse;
            if best.map_or(true, |(g, _, _)| gain > g) {
                best = Some((gain, f, 0.5 * (a + b)));
            }
        }
    }
    best.filter(|(g, _, _)| *g > 0.0).map(|(_, f, t)| (f, t))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_full_tree_memorizes() {
        let x: Vec<Vec<f64>> = (0..50).map(|i| vec![(i as f64 * 0.77).sin(), (i as f64 * 1.9).cos()]).collect();
        let y: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64).collect();
        let params = TreeParams { n_trees: 1, min_leaf: 1, bootstrap: false };
        let f = fit_forest(&params, &x, &y, 0).unwrap();
        let mse: f64 = x.iter().zip(&y).map(|(r, t)| (f.predict(r) - t).powi(2)).sum::<f64>() / 50.0;
        assert_eq!(mse, 0.0);
    }

    #[test]
    fn forest_is_mean_of_trees() {
        let x: Vec<Vec<f64>> = (0..60).map(|i| vec![i as f64, (i % 7) as f64]).collect();
        let y: Vec<f64> = x.iter().map(|r| r[0] * 0.5 + r[1]).collect();
        let f = fit_forest(&TreeParams { n_trees: 7, ..TreeParams::default() }, &x, &y, 3).unwrap();
        for r in &x {
            let per = f.tree_predictions(r);
            assert_eq!(f.predict(r), per.iter().sum::<f64>() / per.len() as f64);
        }
    }

    #[test]
    fn leaves_respect_min_leaf() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let f = fit_forest(&TreeParams { n_trees: 1, min_leaf: 10, bootstrap: false }, &x, &y, 0).unwrap();
        let leaves = f.trees[0].nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count();
        assert_eq!(leaves, 4);
    }
}
