//! Random forest classifier: bootstrap resamples, Gini splits, random
//! feature subsets, fully grown trees.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag};

use super::MembershipVerdict;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub trees: usize,
    /// Candidate features per split; `None` means `ceil(sqrt(features))`.
    pub max_features: Option<usize>,
    /// `None` grows until leaves are pure or no split helps.
    pub max_depth: Option<usize>,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self { trees: 100, max_features: None, max_depth: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    /// Sample counts per class (index 1 = member / seen).
    Leaf { counts: [u32; 2] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    fn leaf(&self, x: &[f64]) -> [u32; 2] {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Split { feature, threshold, left, right } => {
                    at = if x[feature] <= threshold { left } else { right };
                }
                Node::Leaf { counts } => return counts,
            }
        }
    }

    /// 1 for a member vote, 0 for non-member, 0.5 on a tied leaf.
    pub fn vote(&self, x: &[f64]) -> f64 {
        let [neg, pos] = self.leaf(x);
        match pos.cmp(&neg) {
            std::cmp::Ordering::Greater => 1.0,
            std::cmp::Ordering::Less => 0.0,
            std::cmp::Ordering::Equal => 0.5,
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
                Node::Leaf { .. } => 0,
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackForest {
    features: usize,
    trees: Vec<Tree>,
}

impl AttackForest {
    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn feature_count(&self) -> usize {
        self.features
    }

    /// Fraction of trees voting "member".
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.features {
            return Err(Error::dimension(format!("expected {} features, got {}", self.features, x.len())));
        }
        Ok(self.trees.iter().map(|t| t.vote(x)).sum::<f64>() / self.trees.len() as f64)
    }

    pub fn predict(&self, x: &[f64]) -> Result<MembershipVerdict> {
        let score = self.score(x)?;
        Ok(MembershipVerdict { member: score >= 0.5, score })
    }
}

fn gini(counts: [u32; 2]) -> f64 {
    let n = f64::from(counts[0] + counts[1]);
    if n == 0.0 {
        return 0.0;
    }
    let p = f64::from(counts[1]) / n;
    2.0 * p * (1.0 - p)
}

struct Grower<'a, R> {
    x: &'a [Vec<f64>],
    y: &'a [bool],
    mtry: usize,
    max_depth: Option<usize>,
    rng: R,
    nodes: Vec<Node>,
}

impl<R: Rng> Grower<'_, R> {
    fn counts(&self, idx: &[usize]) -> [u32; 2] {
        let pos = idx.iter().filter(|&&i| self.y[i]).count() as u32;
        [idx.len() as u32 - pos, pos]
    }

    /// Best (feature, threshold, weighted child impurity) over one feature.
    fn best_on(&self, f: usize, idx: &mut [usize]) -> Option<(f64, f64)> {
        idx.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
        let total = self.counts(idx);
        let n = idx.len() as f64;
        let mut left = [0u32; 2];
        let mut best: Option<(f64, f64)> = None;
        for k in 0..idx.len() - 1 {
            left[usize::from(self.y[idx[k]])] += 1;
            let (v, w) = (self.x[idx[k]][f], self.x[idx[k + 1]][f]);
            if v == w {
                continue;
            }
            let right = [total[0] - left[0], total[1] - left[1]];
            let nl = (k + 1) as f64;
            let imp = (nl * gini(left) + (n - nl) * gini(right)) / n;
            if best.is_none_or(|(_, b)| imp < b) {
                let mut thr = v + (w - v) / 2.0;
                if thr >= w {
                    thr = v;
                }
                best = Some((thr, imp));
            }
        }
        best
    }

    fn grow(&mut self, mut idx: Vec<usize>, depth: usize) -> usize {
        let counts = self.counts(&idx);
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf { counts });
        let parent = gini(counts);
        if parent == 0.0 || self.max_depth.is_some_and(|d| depth >= d) {
            return at;
        }
        let d = self.x[0].len();
        let mut order: Vec<usize> = (0..d).collect();
        order.shuffle(&mut self.rng);
        let mut best: Option<(usize, f64, f64)> = None;
        for (tried, &f) in order.iter().enumerate() {
            if tried >= self.mtry && best.is_some() {
                break;
            }
            if let Some((thr, imp)) = self.best_on(f, &mut idx) {
                if best.is_none_or(|(_, _, b)| imp < b) {
                    best = Some((f, thr, imp));
                }
            }
        }
        let Some((feature, threshold, imp)) = best else { return at };
        if imp >= parent - 1e-12 {
            return at;
        }
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[i][feature] <= threshold);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[at] = Node::Split { feature, threshold, left, right };
        at
    }
}

pub fn train_forest(x: &[Vec<f64>], y: &[bool], seed: u64) -> Result<AttackForest> {
    train_forest_with(x, y, &ForestConfig::default(), seed)
}

/// Trains a forest; tree `t` draws its bootstrap and feature choices from a
/// stream derived from `(seed, t)`.
pub fn train_forest_with(x: &[Vec<f64>], y: &[bool], config: &ForestConfig, seed: u64) -> Result<AttackForest> {
    if x.len() != y.len() {
        return Err(Error::dimension(format!("{} feature rows, {} labels", x.len(), y.len())));
    }
    let d = x.first().map(Vec::len).ok_or_else(|| Error::attack("no training rows"))?;
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(Error::dimension("feature rows must share a positive width"));
    }
    if y.iter().all(|&v| v) || y.iter().all(|&v| !v) {
        return Err(Error::attack("forest training needs both classes"));
    }
    if config.trees == 0 {
        return Err(Error::config("forest needs at least one tree"));
    }
    let mtry = config.max_features.unwrap_or_else(|| (d as f64).sqrt().ceil() as usize).clamp(1, d);
    let trees = (0..config.trees)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::derive(seed, &[tag::FOREST, t as u64]);
            let idx: Vec<usize> = (0..x.len()).map(|_| r.random_range(0..x.len())).collect();
            let mut g = Grower { x, y, mtry, max_depth: config.max_depth, rng: r, nodes: Vec::new() };
            g.grow(idx, 0);
            Tree { nodes: g.nodes }
        })
        .collect();
    Ok(AttackForest { features: d, trees })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..40 {
            let a = i as f64 / 40.0;
            x.push(vec![a, 1.0 - a]);
            y.push(a > 0.5);
        }
        (x, y)
    }

    #[test]
    fn separable_toy_is_learned() {
        let (x, y) = toy();
        let f = train_forest(&x, &y, 1).unwrap();
        assert_eq!(f.trees().len(), 100);
        for (xi, yi) in x.iter().zip(&y) {
            assert_eq!(f.predict(xi).unwrap().member, *yi);
        }
    }

    #[test]
    fn deterministic_and_well_formed() {
        let (x, y) = toy();
        let a = train_forest(&x, &y, 9).unwrap();
        assert_eq!(a, train_forest(&x, &y, 9).unwrap());
        for t in a.trees() {
            for n in t.nodes() {
                match n {
                    Node::Split { feature, .. } => assert!(*feature < 2),
                    Node::Leaf { counts } => assert!(counts[0] + counts[1] > 0),
                }
            }
        }
    }

    #[test]
    fn single_class_rejected() {
        let x = vec![vec![0.0], vec![1.0]];
        assert!(train_forest(&x, &[true, true], 0).is_err());
        assert!(train_forest(&x, &[true], 0).is_err());
    }

    #[test]
    fn depth_limit_respected() {
        let (x, y) = toy();
        let cfg = ForestConfig { trees: 5, max_depth: Some(1), ..ForestConfig::default() };
        let f = train_forest_with(&x, &y, &cfg, 0).unwrap();
        assert!(f.trees().iter().all(|t| t.depth() <= 1));
    }
}
