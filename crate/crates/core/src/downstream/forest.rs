//! CART trees and a bagged random forest.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data_io::TaskKind;
use crate::error::{Error, Result};
use crate::exec::Exec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 50,
            max_depth: 8,
            min_samples_split: 2,
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
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

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }
}

/// Training target: class codes `0..k` or raw regression values.
enum Target<'a> {
    Classes { codes: &'a [usize], n_classes: usize },
    Values(&'a [f64]),
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    target: Target<'a>,
    max_depth: usize,
    min_samples_split: usize,
    max_features: usize,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl TreeBuilder<'_> {
    fn leaf_value(&self, idx: &[usize]) -> f64 {
        match &self.target {
            Target::Classes { codes, n_classes } => {
                let mut counts = vec![0usize; *n_classes];
                for &i in idx {
                    counts[codes[i]] += 1;
                }
                // Lowest class wins ties.
                let mut best = 0;
                for c in 1..counts.len() {
                    if counts[c] > counts[best] {
                        best = c;
                    }
                }
                best as f64
            }
            Target::Values(v) => idx.iter().map(|&i| v[i]).sum::<f64>() / idx.len() as f64,
        }
    }

    fn is_pure(&self, idx: &[usize]) -> bool {
        match &self.target {
            Target::Classes { codes, .. } => idx.iter().all(|&i| codes[i] == codes[idx[0]]),
            Target::Values(v) => idx.iter().all(|&i| v[i] == v[idx[0]]),
        }
    }

    fn best_split_on(&self, idx: &[usize], feature: usize) -> Option<BestSplit> {
        let mut order: Vec<usize> = idx.to_vec();
        order.sort_by(|&a, &b| self.x[a][feature].total_cmp(&self.x[b][feature]));
        let n = order.len();
        let mut best: Option<BestSplit> = None;
        let mut consider = |k: usize, gain: f64| {
            // split between order[k-1] and order[k]
            let lo = self.x[order[k - 1]][feature];
            let hi = self.x[order[k]][feature];
            if lo < hi && gain > best.as_ref().map_or(1e-12, |b| b.gain) {
                let mid = 0.5 * (lo + hi);
                best = Some(BestSplit {
                    feature,
                    threshold: if mid < hi { mid } else { lo },
                    gain,
                });
            }
        };
        match &self.target {
            Target::Classes { codes, n_classes } => {
                let mut right = vec![0usize; *n_classes];
                for &i in &order {
                    right[codes[i]] += 1;
                }
                let mut left = vec![0usize; *n_classes];
                let gini_sum = |c: &[usize], m: usize| -> f64 {
                    // m * gini = m - sum c^2 / m
                    let sq: f64 = c.iter().map(|&v| (v * v) as f64).sum();
                    m as f64 - sq / m as f64
                };
                let parent = gini_sum(&right, n);
                for k in 1..n {
                    let c = codes[order[k - 1]];
                    left[c] += 1;
                    right[c] -= 1;
                    let child = gini_sum(&left, k) + gini_sum(&right, n - k);
                    consider(k, (parent - child) / n as f64);
                }
            }
            Target::Values(v) => {
                let total: f64 = order.iter().map(|&i| v[i]).sum();
                let total_sq: f64 = order.iter().map(|&i| v[i] * v[i]).sum();
                let parent = total_sq - total * total / n as f64;
                let (mut ls, mut lsq) = (0.0, 0.0);
                for k in 1..n {
                    let y = v[order[k - 1]];
                    ls += y;
                    lsq += y * y;
                    let rs = total - ls;
                    let rsq = total_sq - lsq;
                    let child = (lsq - ls * ls / k as f64) + (rsq - rs * rs / (n - k) as f64);
                    consider(k, (parent - child) / n as f64);
                }
            }
        }
        best
    }

    fn build(&mut self, idx: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf(self.leaf_value(&idx)));
        if depth >= self.max_depth || idx.len() < self.min_samples_split || self.is_pure(&idx) {
            return at;
        }
        let p = self.x[0].len();
        let candidates = sample(rng, p, self.max_features.min(p));
        let mut best: Option<BestSplit> = None;
        for feature in candidates.iter() {
            if let Some(s) = self.best_split_on(&idx, feature) {
                if best.as_ref().map_or(true, |b| s.gain > b.gain) {
                    best = Some(s);
                }
            }
        }
        let Some(split) = best else { return at };
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx
            .into_iter()
            .partition(|&i| self.x[i][split.feature] <= split.threshold);
        let left = self.build(left_idx, depth + 1, rng);
        let right = self.build(right_idx, depth + 1, rng);
        self.nodes[at] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        at
    }
}

/// Majority vote over trees (classification) or mean (regression).
#[derive(Debug, Clone)]
pub struct RandomForest {
    trees: Vec<DecisionTree>,
    task: TaskKind,
    classes: Vec<f64>,
}

impl RandomForest {
    /// Bootstrap rows and `sqrt(p)` candidate features per split, all keyed by `seed`.
    pub fn fit(
        x: &[Vec<f64>],
        y: &[f64],
        task: TaskKind,
        params: ForestParams,
        seed: u64,
        exec: Exec,
    ) -> Result<Self> {
        if x.is_empty() || x[0].is_empty() {
            return Err(Error::InvalidArgument("empty design matrix".into()));
        }
        if x.len() != y.len() {
            return Err(Error::Shape(format!("{} rows vs {} targets", x.len(), y.len())));
        }
        let mut classes = Vec::new();
        let codes: Vec<usize> = match task {
            TaskKind::Classification => {
                classes = y.to_vec();
                classes.sort_by(f64::total_cmp);
                classes.dedup();
                if classes.len() < 2 {
                    return Err(Error::Evaluation(
                        "single-class training fold for classification".into(),
                    ));
                }
                y.iter()
                    .map(|v| classes.partition_point(|c| c < v))
                    .collect()
            }
            TaskKind::Regression => Vec::new(),
        };
        let n = x.len();
        let max_features = ((x[0].len() as f64).sqrt().floor() as usize).max(1);
        let trees = exec.map_range(params.n_trees, |t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let boot: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let target = match task {
                TaskKind::Classification => Target::Classes {
                    codes: &codes,
                    n_classes: classes.len(),
                },
                TaskKind::Regression => Target::Values(y),
            };
            let mut builder = TreeBuilder {
                x,
                target,
                max_depth: params.max_depth,
                min_samples_split: params.min_samples_split.max(2),
                max_features,
                nodes: Vec::new(),
            };
            builder.build(boot, 0, &mut rng);
            DecisionTree {
                nodes: builder.nodes,
            }
        });
        Ok(Self {
            trees,
            task,
            classes,
        })
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Vec<f64> {
        x.iter().map(|row| self.predict_row(row)).collect()
    }

    fn predict_row(&self, row: &[f64]) -> f64 {
        match self.task {
            TaskKind::Regression => {
                self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / self.trees.len() as f64
            }
            TaskKind::Classification => {
                let mut votes = vec![0usize; self.classes.len()];
                for t in &self.trees {
                    votes[t.predict_row(row) as usize] += 1;
                }
                let mut best = 0;
                for c in 1..votes.len() {
                    if votes[c] > votes[best] {
                        best = c;
                    }
                }
                self.classes[best]
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{f1_score, one_minus_rae};

    fn blobs() -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..60 {
            let t = i as f64 * 0.1;
            x.push(vec![t.sin() * 0.3, t.cos() * 0.3]);
            y.push(0.0);
            x.push(vec![3.0 + t.sin() * 0.3, 3.0 + t.cos() * 0.3]);
            y.push(1.0);
        }
        (x, y)
    }

    #[test]
    fn separable_blobs_fit_perfectly() {
        let (x, y) = blobs();
        let rf = RandomForest::fit(&x, &y, TaskKind::Classification, ForestParams::default(), 1, Exec::Sequential)
            .unwrap();
        assert_eq!(f1_score(&y, &rf.predict(&x)).unwrap(), 1.0);
        assert_eq!(rf.trees().len(), 50);
        assert!(rf.trees().iter().all(|t| t.depth() <= 8));
    }

    #[test]
    fn identity_regression() {
        let x: Vec<Vec<f64>> = (0..200).map(|i| vec![i as f64 / 10.0]).collect();
        let y: Vec<f64> = x.iter().map(|r| r[0]).collect();
        let rf = RandomForest::fit(&x, &y, TaskKind::Regression, ForestParams::default(), 5, Exec::Parallel)
            .unwrap();
        assert!(one_minus_rae(&y, &rf.predict(&x)).unwrap() > 0.8);
    }

    #[test]
    fn deterministic_across_exec_modes() {
        let (x, y) = blobs();
        let a = RandomForest::fit(&x, &y, TaskKind::Regression, ForestParams::default(), 9, Exec::Sequential)
            .unwrap()
            .predict(&x);
        let b = RandomForest::fit(&x, &y, TaskKind::Regression, ForestParams::default(), 9, Exec::Parallel)
            .unwrap()
            .predict(&x);
        assert_eq!(a, b);
    }

    #[test]
    fn single_class_rejected() {
        let x = vec![vec![1.0], vec![2.0]];
        assert!(RandomForest::fit(&x, &[1.0, 1.0], TaskKind::Classification, ForestParams::default(), 0, Exec::Sequential)
            .is_err());
    }
}
