//! Gini decision trees with exhaustive (random forest) or single random
//! (extra trees) thresholds.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    /// Rows with `value <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        n_samples: usize,
        /// Node sample fraction times Gini decrease.
        weighted_decrease: f64,
    },
    Leaf {
        proba: Vec<f64>,
        n_samples: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    /// Root at index 0.
    pub nodes: Vec<Node>,
}

#[derive(Clone, Copy, Debug)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub features_per_split: usize,
    pub random_thresholds: bool,
}

/// Column-major training data.
pub struct TrainingData<'a> {
    pub columns: &'a [Vec<f64>],
    pub y: &'a [usize],
    pub n_classes: usize,
}

/// Gini impurity from an exact integer sum of squares, so the value does
/// not depend on class order.
fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let squares: u64 = counts.iter().map(|&c| (c * c) as u64).sum();
    1.0 - squares as f64 / (n * n) as f64
}

struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

struct Builder<'a, 'r> {
    data: &'a TrainingData<'a>,
    params: TreeParams,
    rng: &'r mut Rng,
    nodes: Vec<Node>,
    n_root: f64,
}

impl Builder<'_, '_> {
    fn counts(&self, samples: &[usize]) -> Vec<usize> {
        let mut counts = vec![0; self.data.n_classes];
        for &s in samples {
            counts[self.data.y[s]] += 1;
        }
        counts
    }

    fn grow(&mut self, samples: &mut [usize], depth: usize) -> usize {
        let n = samples.len();
        let counts = self.counts(samples);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { proba: Vec::new(), n_samples: n });
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let stop = pure || n < self.params.min_samples_split || self.params.max_depth.is_some_and(|m| depth >= m);
        if !stop {
            let parent = gini(&counts, n);
            if let Some(split) = self.best_split(samples, &counts, parent) {
                let col = &self.data.columns[split.feature];
                let mid = partition(samples, |s| col[s] <= split.threshold);
                let (l, r) = samples.split_at_mut(mid);
                let left = self.grow(l, depth + 1);
                let right = self.grow(r, depth + 1);
                self.nodes[id] = Node::Split {
                    feature: split.feature,
                    threshold: split.threshold,
                    left,
                    right,
                    n_samples: n,
                    weighted_decrease: (n as f64 / self.n_root) * split.gain.max(0.0),
                };
                return id;
            }
        }
        let proba = counts.iter().map(|&c| c as f64 / n as f64).collect();
        self.nodes[id] = Node::Leaf { proba, n_samples: n };
        id
    }

    /// Draws candidate features in random order until `features_per_split`
    /// non-constant ones have been evaluated.
    fn best_split(&mut self, samples: &[usize], counts: &[usize], parent: f64) -> Option<Split> {
        let d = self.data.columns.len();
        let mut order: Vec<usize> = (0..d).collect();
        let mut evaluated = 0;
        let mut best: Option<Split> = None;
        for i in 0..d {
            let j = i + self.rng.below(d - i);
            order.swap(i, j);
            let feature = order[i];
            let col = &self.data.columns[feature];
            let (min, max) = samples
                .iter()
                .map(|&s| col[s])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            if min == max {
                continue;
            }
            evaluated += 1;
            let cand = if self.params.random_thresholds {
                self.random_split(feature, samples, counts, parent, min, max)
            } else {
                self.exhaustive_split(feature, samples, counts, parent)
            };
            if best.as_ref().is_none_or(|b| cand.gain > b.gain) {
                best = Some(cand);
            }
            if evaluated == self.params.features_per_split {
                break;
            }
        }
        best
    }

    fn gain(&self, parent: f64, left: &[usize], nl: usize, total: &[usize], n: usize) -> f64 {
        let nr = n - nl;
        let mut squares_l = 0u64;
        let mut squares_r = 0u64;
        for (&t, &l) in total.iter().zip(left) {
            squares_l += (l * l) as u64;
            squares_r += ((t - l) * (t - l)) as u64;
        }
        let weighted = |squares: u64, m: usize| if m == 0 { 0.0 } else { m as f64 - squares as f64 / m as f64 };
        parent - (weighted(squares_l, nl) + weighted(squares_r, nr)) / n as f64
    }

    fn random_split(&mut self, feature: usize, samples: &[usize], counts: &[usize], parent: f64, min: f64, max: f64) -> Split {
        let mut threshold = min + self.rng.unit() * (max - min);
        if threshold >= max {
            threshold = min;
        }
        let col = &self.data.columns[feature];
        let mut left = vec![0; self.data.n_classes];
        let mut nl = 0;
        for &s in samples {
            if col[s] <= threshold {
                left[self.data.y[s]] += 1;
                nl += 1;
            }
        }
        Split { feature, threshold, gain: self.gain(parent, &left, nl, counts, samples.len()) }
    }

    fn exhaustive_split(&self, feature: usize, samples: &[usize], counts: &[usize], parent: f64) -> Split {
        let col = &self.data.columns[feature];
        let mut pairs: Vec<(f64, usize)> = samples.iter().map(|&s| (col[s], self.data.y[s])).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = pairs.len();
        let mut left = vec![0; self.data.n_classes];
        let mut best = Split { feature, threshold: 0.0, gain: f64::NEG_INFINITY };
        for i in 0..n - 1 {
            left[pairs[i].1] += 1;
            let (lo, hi) = (pairs[i].0, pairs[i + 1].0);
            if lo == hi {
                continue;
            }
            let gain = self.gain(parent, &left, i + 1, counts, n);
            if gain > best.gain {
                let mid = lo + (hi - lo) / 2.0;
                best = Split { feature, threshold: if mid < hi { mid } else { lo }, gain };
            }
        }
        best
    }
}

fn partition(samples: &mut [usize], goes_left: impl Fn(usize) -> bool) -> usize {
    let mut mid = 0;
    for i in 0..samples.len() {
        if goes_left(samples[i]) {
            samples.swap(mid, i);
            mid += 1;
        }
    }
    mid
}

impl DecisionTree {
    /// Fits a tree on `samples` (row indices, repeats allowed).
    pub fn fit(data: &TrainingData<'_>, mut samples: Vec<usize>, params: TreeParams, rng: &mut Rng) -> DecisionTree {
        let n_root = samples.len() as f64;
        let mut builder = Builder { data, params, rng, nodes: Vec::new(), n_root };
        builder.grow(&mut samples, 0);
        DecisionTree { nodes: builder.nodes }
    }

    /// Leaf class distribution for a row given by a feature accessor.
    pub fn leaf_proba(&self, value: impl Fn(usize) -> f64) -> &[f64] {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Split { feature, threshold, left, right, .. } => {
                    id = if value(*feature) <= *threshold { *left } else { *right };
                }
                Node::Leaf { proba, .. } => return proba,
            }
        }
    }

    /// Per-feature weighted Gini decrease, normalized to sum 1. All zeros
    /// when the tree never splits with positive gain.
    pub fn importance(&self, n_features: usize) -> Vec<f64> {
        let mut imp = vec![0.0; n_features];
        for node in &self.nodes {
            if let Node::Split { feature, weighted_decrease, .. } = node {
                imp[*feature] += weighted_decrease;
            }
        }
        let total: f64 = imp.iter().sum();
        if total > 0.0 {
            imp.iter_mut().for_each(|v| *v /= total);
        }
        imp
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], id: usize) -> usize {
            match &nodes[id] {
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(random: bool) -> TreeParams {
        TreeParams { max_depth: None, min_samples_split: 2, features_per_split: 2, random_thresholds: random }
    }

    #[test]
    fn separating_feature_fits_training_set() {
        let columns = vec![vec![0.3, 0.1, 0.9, 0.7, 0.2, 0.8], vec![5.0, 5.0, 5.0, 1.0, 1.0, 1.0]];
        let y = [0, 0, 1, 1, 0, 1];
        let data = TrainingData { columns: &columns, y: &y, n_classes: 2 };
        for random in [false, true] {
            let tree = DecisionTree::fit(&data, (0..6).collect(), params(random), &mut Rng::new(1));
            for (i, &label) in y.iter().enumerate() {
                let p = tree.leaf_proba(|f| columns[f][i]);
                assert_eq!(p[label], 1.0);
            }
            let imp = tree.importance(2);
            assert!((imp.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn exhaustive_threshold_is_midpoint() {
        let columns = vec![vec![1.0, 2.0, 4.0, 8.0]];
        let y = [0, 0, 1, 1];
        let data = TrainingData { columns: &columns, y: &y, n_classes: 2 };
        let tree = DecisionTree::fit(&data, (0..4).collect(), params(false), &mut Rng::new(0));
        assert!(matches!(tree.nodes[0], Node::Split { feature: 0, threshold, .. } if threshold == 3.0));
        assert_eq!(tree.depth(), 1);
        assert_eq!(tree.importance(1), [1.0]);
    }

    #[test]
    fn stopping_rules() {
        let columns = vec![vec![1.0, 2.0, 3.0]];
        let y = [0, 1, 1];
        let data = TrainingData { columns: &columns, y: &y, n_classes: 2 };
        let p = TreeParams { min_samples_split: 4, ..params(false) };
        let tree = DecisionTree::fit(&data, (0..3).collect(), p, &mut Rng::new(0));
        assert_eq!(tree.nodes.len(), 1);
        assert_eq!(tree.leaf_proba(|_| 0.0), [1.0 / 3.0, 2.0 / 3.0]);
        assert_eq!(tree.importance(1), [0.0]);

        let p = TreeParams { max_depth: Some(0), ..params(false) };
        assert_eq!(DecisionTree::fit(&data, (0..3).collect(), p, &mut Rng::new(0)).nodes.len(), 1);

        let constant = vec![vec![1.0; 3]];
        let data = TrainingData { columns: &constant, y: &y, n_classes: 2 };
        assert_eq!(DecisionTree::fit(&data, (0..3).collect(), params(false), &mut Rng::new(0)).nodes.len(), 1);
    }
}
