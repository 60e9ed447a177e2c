//! Gradient-boosted binary regression trees with exact greedy splits.
//!
//! Trees grow level by level over presorted feature columns, so each level
//! costs one pass per feature. Splits are scored on the negative gradients
//! with the usual variance-reduction gain; leaf values then minimize the loss
//! inside each leaf (mean residual for squared loss, residual quantile for the
//! pinball loss).

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::linalg::Design;
use crate::num::quantile_sorted;

const LEAF: u32 = u32::MAX;
const ZERO_RESIDUAL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum GbtLoss {
    Squared,
    /// Pinball loss at the given quantile; 0.5 is absolute error.
    Pinball { quantile: f64 },
}

impl GbtLoss {
    pub fn loss(&self, target: f64, pred: f64) -> f64 {
        let u = target - pred;
        match *self {
            GbtLoss::Squared => u * u,
            GbtLoss::Pinball { quantile } => {
                if u < 0.0 {
                    (quantile - 1.0) * u
                } else {
                    quantile * u
                }
            }
        }
    }

    pub fn mean_loss(&self, target: &[f64], pred: &[f64]) -> f64 {
        if target.is_empty() {
            return 0.0;
        }
        target.iter().zip(pred).map(|(t, p)| self.loss(*t, *p)).sum::<f64>() / target.len() as f64
    }

    /// Residuals within `ZERO_RESIDUAL` of zero count as exact hits for the
    /// pinball subgradient, so rounding noise cannot flip their sign.
    fn negative_gradient(&self, target: f64, pred: f64) -> f64 {
        let u = target - pred;
        match *self {
            GbtLoss::Squared => u,
            GbtLoss::Pinball { quantile } => {
                if u > ZERO_RESIDUAL {
                    quantile
                } else if u < -ZERO_RESIDUAL {
                    quantile - 1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn optimal_constant(&self, values: &mut [f64]) -> f64 {
        if values.is_empty() {
            return 0.0;
        }
        match *self {
            GbtLoss::Squared => values.iter().sum::<f64>() / values.len() as f64,
            GbtLoss::Pinball { quantile } => {
                values.sort_by(f64::total_cmp);
                quantile_sorted(values, quantile)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub n_trees: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    pub loss: GbtLoss,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    /// `u32::MAX` marks a leaf.
    pub feature: u32,
    /// Rows with `x[feature] <= threshold` go left.
    pub threshold: f64,
    pub left: u32,
    pub right: u32,
    pub value: f64,
    pub gain: f64,
}

impl Node {
    fn leaf() -> Self {
        Node { feature: LEAF, threshold: 0.0, left: 0, right: 0, value: 0.0, gain: 0.0 }
    }

    pub fn is_leaf(&self) -> bool {
        self.feature == LEAF
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut k = 0;
        loop {
            let n = &self.nodes[k];
            if n.is_leaf() {
                return k;
            }
            k = if row[n.feature as usize] <= n.threshold { n.left } else { n.right } as usize;
        }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        self.nodes[self.leaf_index(row)].value
    }
}

/// `base_score + learning_rate * sum(tree leaf values)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub trees: Vec<Tree>,
    pub learning_rate: f64,
    pub base_score: f64,
    pub n_features: usize,
}

impl TreeEnsemble {
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.predict_staged(row, self.trees.len())
    }

    /// Prediction using only the first `n_trees` trees.
    pub fn predict_staged(&self, row: &[f64], n_trees: usize) -> f64 {
        let s: f64 = self.trees.iter().take(n_trees).map(|t| t.predict(row)).sum();
        self.base_score + self.learning_rate * s
    }

    /// Total split gain per feature, normalized to sum to one (all zeros when
    /// no tree splits).
    pub fn gain_importance(&self) -> Vec<f64> {
        let mut imp = vec![0.0; self.n_features];
        for t in &self.trees {
            for n in &t.nodes {
                if !n.is_leaf() {
                    imp[n.feature as usize] += n.gain;
                }
            }
        }
        let total: f64 = imp.iter().sum();
        if total > 0.0 {
            for v in &mut imp {
                *v /= total;
            }
        }
        imp
    }

    /// Features used by at least one split.
    pub fn split_features(&self) -> Vec<usize> {
        let mut used: Vec<usize> = self
            .trees
            .iter()
            .flat_map(|t| t.nodes.iter().filter(|n| !n.is_leaf()).map(|n| n.feature as usize))
            .collect();
        used.sort_unstable();
        used.dedup();
        used
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoostResult {
    pub ensemble: TreeEnsemble,
    /// Mean training loss at the base score and after every tree.
    pub train_loss: Vec<f64>,
}

/// Fit a boosted ensemble. Only columns with `allowed[j]` are split on.
pub fn boost(x: &Design, y: &[f64], params: &TreeParams, allowed: &[bool]) -> BoostResult {
    let n = x.n;
    assert_eq!(y.len(), n);
    assert_eq!(allowed.len(), x.p);
    let feats: Vec<usize> = (0..x.p).filter(|&j| allowed[j]).collect();
    let orders: Vec<Vec<u32>> = feats
        .iter()
        .map(|&f| {
            let mut o: Vec<u32> = (0..n as u32).collect();
            o.sort_by(|&a, &b| {
                x.data[a as usize * x.p + f]
                    .total_cmp(&x.data[b as usize * x.p + f])
                    .then(a.cmp(&b))
            });
            o
        })
        .collect();
    let sorted_vals: Vec<Vec<f64>> = feats
        .iter()
        .zip(&orders)
        .map(|(&f, o)| o.iter().map(|&i| x.data[i as usize * x.p + f]).collect())
        .collect();

    let base_score = params.loss.optimal_constant(&mut y.to_vec());
    let mut pred = vec![base_score; n];
    let mut train_loss = vec![params.loss.mean_loss(y, &pred)];
    let mut trees = Vec::new();
    let mut grad = vec![0.0; n];
    let mut resid_buf: Vec<f64> = Vec::with_capacity(n);

    for _ in 0..params.n_trees {
        for i in 0..n {
            grad[i] = params.loss.negative_gradient(y[i], pred[i]);
        }
        let (mut tree, node_of) = grow(x, &grad, &feats, &orders, &sorted_vals, params);

        // leaf values from the residuals of each leaf's rows
        let mut members: Vec<Vec<u32>> = vec![Vec::new(); tree.nodes.len()];
        for (i, &nd) in node_of.iter().enumerate() {
            members[nd as usize].push(i as u32);
        }
        let mut all_zero = true;
        for (k, rows) in members.iter().enumerate() {
            if rows.is_empty() || !tree.nodes[k].is_leaf() {
                continue;
            }
            resid_buf.clear();
            resid_buf.extend(rows.iter().map(|&i| y[i as usize] - pred[i as usize]));
            let v = params.loss.optimal_constant(&mut resid_buf);
            tree.nodes[k].value = v;
            all_zero &= v == 0.0;
        }
        if all_zero && tree.nodes.len() == 1 {
            break;
        }
        for i in 0..n {
            pred[i] += params.learning_rate * tree.nodes[node_of[i] as usize].value;
        }
        train_loss.push(params.loss.mean_loss(y, &pred));
        trees.push(tree);
    }

    BoostResult {
        ensemble: TreeEnsemble { trees, learning_rate: params.learning_rate, base_score, n_features: x.p },
        train_loss,
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

fn grow(
    x: &Design,
    grad: &[f64],
    feats: &[usize],
    orders: &[Vec<u32>],
    sorted_vals: &[Vec<f64>],
    params: &TreeParams,
) -> (Tree, Vec<u32>) {
    let n = x.n;
    let min_leaf = params.min_samples_leaf.max(1);
    let mut nodes = vec![Node::leaf()];
    let mut node_of = vec![0u32; n];
    let mut node_sum = vec![grad.iter().sum::<f64>()];
    let mut node_sq = vec![grad.iter().map(|g| g * g).sum::<f64>()];
    let mut node_cnt = vec![n];

    let mut frontier: Vec<u32> =
        if params.max_depth > 0 && n >= 2 * min_leaf { vec![0] } else { Vec::new() };

    for depth in 0..params.max_depth {
        if frontier.is_empty() {
            break;
        }
        let m = frontier.len();
        let mut slot = vec![u32::MAX; nodes.len()];
        for (s, &nd) in frontier.iter().enumerate() {
            slot[nd as usize] = s as u32;
        }
        let total: Vec<f64> = frontier.iter().map(|&nd| node_sum[nd as usize]).collect();
        let count: Vec<usize> = frontier.iter().map(|&nd| node_cnt[nd as usize]).collect();
        let parent: Vec<f64> = (0..m).map(|s| total[s] * total[s] / count[s] as f64).collect();
        let mut best: Vec<Candidate> = frontier
            .iter()
            .map(|&nd| Candidate { gain: 1e-10 * node_sq[nd as usize], feature: usize::MAX, threshold: 0.0 })
            .collect();

        let mut cnt = vec![0usize; m];
        let mut sum = vec![0.0f64; m];
        let mut last = vec![0.0f64; m];
        for (fi, &f) in feats.iter().enumerate() {
            cnt.iter_mut().for_each(|c| *c = 0);
            sum.iter_mut().for_each(|c| *c = 0.0);
            for (&i, &v) in orders[fi].iter().zip(&sorted_vals[fi]) {
                let s = slot[node_of[i as usize] as usize];
                if s == u32::MAX {
                    continue;
                }
                let s = s as usize;
                let c = cnt[s];
                if c >= min_leaf && v > last[s] && count[s] - c >= min_leaf {
                    let l = sum[s];
                    let r = total[s] - l;
                    let gain = l * l / c as f64 + r * r / (count[s] - c) as f64 - parent[s];
                    if gain > best[s].gain {
                        let mid = last[s] + 0.5 * (v - last[s]);
                        let threshold = if mid < v { mid } else { last[s] };
                        best[s] = Candidate { gain, feature: f, threshold };
                    }
                }
                cnt[s] = c + 1;
                sum[s] += grad[i as usize];
                last[s] = v;
            }
        }

        let mut split_any = false;
        for (s, &nd) in frontier.iter().enumerate() {
            let b = best[s];
            if b.feature == usize::MAX {
                continue;
            }
            split_any = true;
            let left = nodes.len() as u32;
            nodes.push(Node::leaf());
            nodes.push(Node::leaf());
            let node = &mut nodes[nd as usize];
            node.feature = b.feature as u32;
            node.threshold = b.threshold;
            node.left = left;
            node.right = left + 1;
            node.gain = b.gain;
            node_sum.extend([0.0, 0.0]);
            node_sq.extend([0.0, 0.0]);
            node_cnt.extend([0, 0]);
        }
        if !split_any {
            break;
        }
        for i in 0..n {
            let nd = node_of[i] as usize;
            let node = &nodes[nd];
            if node.is_leaf() || slot.get(nd).copied().unwrap_or(u32::MAX) == u32::MAX {
                continue;
            }
            let child = if x.data[i * x.p + node.feature as usize] <= node.threshold {
                node.left
            } else {
                node.right
            };
            node_of[i] = child;
            let c = child as usize;
            node_sum[c] += grad[i];
            node_sq[c] += grad[i] * grad[i];
            node_cnt[c] += 1;
        }
        let next_depth = depth + 1;
        frontier = frontier
            .iter()
            .filter(|&&nd| !nodes[nd as usize].is_leaf())
            .flat_map(|&nd| [nodes[nd as usize].left, nodes[nd as usize].right])
            .filter(|&c| next_depth < params.max_depth && node_cnt[c as usize] >= 2 * min_leaf)
            .collect();
    }
    (Tree { nodes }, node_of)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design(rows: &[Vec<f64>]) -> Design {
        let mut d = Design::with_capacity(rows[0].len(), rows.len());
        for r in rows {
            d.push_row(r);
        }
        d
    }

    fn params(loss: GbtLoss) -> TreeParams {
        TreeParams { max_depth: 3, n_trees: 50, learning_rate: 0.1, min_samples_leaf: 1, loss }
    }

    #[test]
    fn constant_target_is_a_single_leaf() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, (i * 7 % 5) as f64]).collect();
        let y = vec![3.25; 20];
        for loss in [GbtLoss::Squared, GbtLoss::Pinball { quantile: 0.5 }] {
            let fit = boost(&design(&rows), &y, &params(loss), &[true, true]);
            assert!(fit.ensemble.trees.is_empty());
            for r in &rows {
                assert_eq!(fit.ensemble.predict(r), 3.25);
            }
        }
    }

    #[test]
    fn step_function_is_learned() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..40).map(|i| if i < 20 { 1.0 } else { 5.0 }).collect();
        let p = TreeParams { learning_rate: 1.0, n_trees: 1, ..params(GbtLoss::Squared) };
        let fit = boost(&design(&rows), &y, &p, &[true]);
        let t = &fit.ensemble.trees[0];
        assert_eq!(t.nodes[0].feature, 0);
        assert!(t.nodes[0].threshold > 19.0 && t.nodes[0].threshold < 20.0);
        assert!((fit.ensemble.predict(&[3.0]) - 1.0).abs() < 1e-12);
        assert!((fit.ensemble.predict(&[33.0]) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn masked_features_are_never_split() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64, (i % 2) as f64]).collect();
        let y: Vec<f64> = (0..40).map(|i| (i % 2) as f64).collect();
        let fit = boost(&design(&rows), &y, &params(GbtLoss::Squared), &[true, false]);
        assert!(fit.ensemble.split_features().iter().all(|&f| f == 0));
        let imp = fit.ensemble.gain_importance();
        assert_eq!(imp[1], 0.0);
    }

    #[test]
    fn single_feature_importance_is_one() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, 1.0]).collect();
        let y: Vec<f64> = (0..30).map(|i| (i * i) as f64).collect();
        let fit = boost(&design(&rows), &y, &params(GbtLoss::Squared), &[true, true]);
        assert_eq!(fit.ensemble.gain_importance(), vec![1.0, 0.0]);
    }

    #[test]
    fn min_leaf_respected() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| if i == 0 { 100.0 } else { 0.0 }).collect();
        let p = TreeParams { min_samples_leaf: 3, n_trees: 1, ..params(GbtLoss::Squared) };
        let fit = boost(&design(&rows), &y, &p, &[true]);
        let t = &fit.ensemble.trees[0];
        let mut counts = vec![0; t.nodes.len()];
        for r in &rows {
            counts[t.leaf_index(r)] += 1;
        }
        assert!(counts.iter().enumerate().all(|(k, &c)| !t.nodes[k].is_leaf() || c == 0 || c >= 3));
    }
}
