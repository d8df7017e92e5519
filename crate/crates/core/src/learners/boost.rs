//! Gradient-boosted shallow regression trees on logistic loss.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// One tree as parallel node arrays; `feature < 0` marks a leaf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub feature: Vec<i32>,
    pub threshold: Vec<f64>,
    pub left: Vec<u32>,
    pub right: Vec<u32>,
    pub value: Vec<f64>,
}

impl Tree {
    fn predict(&self, row: &[f64]) -> f64 {
        let mut node = 0usize;
        loop {
            let f = self.feature[node];
            if f < 0 {
                return self.value[node];
            }
            node = if row[f as usize] <= self.threshold[node] {
                self.left[node] as usize
            } else {
                self.right[node] as usize
            };
        }
    }

    fn push_leaf(&mut self, value: f64) -> usize {
        self.feature.push(-1);
        self.threshold.push(0.0);
        self.left.push(0);
        self.right.push(0);
        self.value.push(value);
        self.feature.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    /// Log-odds of the training prior.
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
}

struct Growth<'a> {
    x: &'a [Vec<f64>],
    grad: &'a [f64],
    hess: &'a [f64],
    max_depth: usize,
    lambda: f64,
    min_child_weight: f64,
}

impl Growth<'_> {
    fn leaf_value(&self, rows: &[usize]) -> f64 {
        let g: f64 = rows.iter().map(|&i| self.grad[i]).sum();
        let h: f64 = rows.iter().map(|&i| self.hess[i]).sum();
        -g / (h + self.lambda)
    }

    fn best_split(&self, rows: &[usize]) -> Option<(usize, f64, f64)> {
        let d = self.x[0].len();
        let g_tot: f64 = rows.iter().map(|&i| self.grad[i]).sum();
        let h_tot: f64 = rows.iter().map(|&i| self.hess[i]).sum();
        let parent = g_tot * g_tot / (h_tot + self.lambda);
        let mut best: Option<(usize, f64, f64)> = None;
        let mut order = rows.to_vec();
        for f in 0..d {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let (mut gl, mut hl) = (0.0, 0.0);
            for w in 0..order.len() - 1 {
                let i = order[w];
                gl += self.grad[i];
                hl += self.hess[i];
                let (v, next) = (self.x[i][f], self.x[order[w + 1]][f]);
                if v == next {
                    continue;
                }
                let (gr, hr) = (g_tot - gl, h_tot - hl);
                if hl < self.min_child_weight || hr < self.min_child_weight {
                    continue;
                }
                let gain = gl * gl / (hl + self.lambda) + gr * gr / (hr + self.lambda) - parent;
                if gain > 1e-12 && best.is_none_or(|(_, _, g)| gain > g) {
                    best = Some((f, v + (next - v) / 2.0, gain));
                }
            }
        }
        best
    }

    fn grow(&self, tree: &mut Tree, rows: &[usize], depth: usize) -> usize {
        if depth >= self.max_depth || rows.len() < 2 {
            return tree.push_leaf(self.leaf_value(rows));
        }
        let Some((f, thr, _)) = self.best_split(rows) else {
            return tree.push_leaf(self.leaf_value(rows));
        };
        let node = tree.push_leaf(0.0);
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| self.x[i][f] <= thr);
        let li = self.grow(tree, &l, depth + 1);
        let ri = self.grow(tree, &r, depth + 1);
        tree.feature[node] = f as i32;
        tree.threshold[node] = thr;
        tree.left[node] = li as u32;
        tree.right[node] = ri as u32;
        node
    }
}

impl TreeEnsemble {
    pub fn fit(
        x: &[Vec<f64>],
        y: &[u8],
        rounds: usize,
        learning_rate: f64,
        max_depth: usize,
        lambda: f64,
        min_child_weight: f64,
    ) -> Self {
        let n = x.len();
        let prior = y.iter().filter(|&&l| l == 1).count() as f64 / n as f64;
        let base_score = (prior / (1.0 - prior)).ln();
        let mut margin = vec![base_score; n];
        let mut trees = Vec::with_capacity(rounds);
        let all: Vec<usize> = (0..n).collect();
        for _ in 0..rounds {
            let p: Vec<f64> = margin.iter().map(|m| m.sigmoid()).collect();
            let grad: Vec<f64> = p.iter().zip(y).map(|(p, &l)| p - f64::from(l)).collect();
            let hess: Vec<f64> = p.iter().map(|p| (p * (1.0 - p)).max(1e-16)).collect();
            let growth = Growth {
                x,
                grad: &grad,
                hess: &hess,
                max_depth,
                lambda,
                min_child_weight,
            };
            let mut tree = Tree {
                feature: vec![],
                threshold: vec![],
                left: vec![],
                right: vec![],
                value: vec![],
            };
            growth.grow(&mut tree, &all, 0);
            for (m, r) in margin.iter_mut().zip(x) {
                *m += learning_rate * tree.predict(r);
            }
            trees.push(tree);
        }
        Self {
            base_score,
            learning_rate,
            trees,
        }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let m = self.base_score
            + self.learning_rate * self.trees.iter().map(|t| t.predict(row)).sum::<f64>();
        m.sigmoid()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_two_captures_conjunction() {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..40 {
            let a = (i % 2) as f64;
            let b = ((i / 2) % 2) as f64;
            x.push(vec![a, b]);
            y.push(u8::from(a == 1.0 && b == 1.0));
        }
        let m = TreeEnsemble::fit(&x, &y, 50, 0.3, 2, 1.0, 1e-3);
        for (r, &l) in x.iter().zip(&y) {
            assert_eq!(u8::from(m.predict(r) >= 0.5), l);
        }
        assert!(m.trees.iter().all(|t| t.feature.len() <= 7));
    }
}
