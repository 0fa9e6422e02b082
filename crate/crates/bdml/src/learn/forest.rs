//! Random forest from scratch: bootstrap-resampled CART trees with
//! per-node feature subsampling. Regression trees split on variance
//! reduction; probability trees on Gini impurity and predict the leaf
//! frequency of ones, so averaged outputs stay in [0, 1] by construction.

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::learn::Task;
use crate::seeding::{derive_seed, Stream};

pub const N_TREES: usize = 500;
pub const MIN_LEAF: usize = 5;

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
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict_row(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[feature] <= threshold { left } else { right };
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForestModel {
    trees: Vec<Tree>,
}

impl ForestModel {
    pub fn predict(&self, x: &ArrayView2<f64>) -> Vec<f64> {
        let mut out = vec![0.0; x.nrows()];
        let mut row_buf = vec![0.0; x.ncols()];
        for (i, row) in x.rows().into_iter().enumerate() {
            for (slot, &v) in row_buf.iter_mut().zip(row.iter()) {
                *slot = v;
            }
            let mut sum = 0.0;
            for tree in &self.trees {
                sum += tree.predict_row(&row_buf);
            }
            out[i] = sum / self.trees.len() as f64;
        }
        out
    }
}

struct Builder<'a> {
    x: &'a ArrayView2<'a, f64>,
    y: &'a [f64],
    mtry: usize,
}

impl Builder<'_> {
    fn grow(&self, rng: &mut ChaCha8Rng) -> Tree {
        let n = self.y.len();
        let sample: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let mut tree = Tree { nodes: Vec::new() };
        self.grow_node(sample, rng, &mut tree);
        tree
    }

    fn leaf_value(&self, rows: &[usize]) -> f64 {
        let sum: f64 = rows.iter().map(|&i| self.y[i]).sum();
        sum / rows.len() as f64
    }

    fn grow_node(&self, rows: Vec<usize>, rng: &mut ChaCha8Rng, tree: &mut Tree) -> usize {
        let id = tree.nodes.len();
        tree.nodes.push(Node::Leaf(0.0));
        if rows.len() < 2 * MIN_LEAF || is_pure(self.y, &rows) {
            tree.nodes[id] = Node::Leaf(self.leaf_value(&rows));
            return id;
        }
        match self.best_split(&rows, rng) {
            None => {
                tree.nodes[id] = Node::Leaf(self.leaf_value(&rows));
                id
            }
            Some((feature, threshold)) => {
                let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
                    .into_iter()
                    .partition(|&i| self.x[(i, feature)] <= threshold);
                let left = self.grow_node(left_rows, rng, tree);
                let right = self.grow_node(right_rows, rng, tree);
                tree.nodes[id] = Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
                id
            }
        }
    }

    /// Best (feature, threshold) over a random subset of features.
    ///
    /// Variance reduction (regression) and Gini reduction (a {0,1} target)
    /// both reduce to maximizing sum_L^2/n_L + sum_R^2/n_R of the child
    /// target sums, so one scan serves both tasks.
    fn best_split(&self, rows: &[usize], rng: &mut ChaCha8Rng) -> Option<(usize, f64)> {
        let p = self.x.ncols();
        let mut features: Vec<usize> = (0..p).collect();
        features.shuffle(rng);
        features.truncate(self.mtry.min(p));

        let total: f64 = rows.iter().map(|&i| self.y[i]).sum();
        let n = rows.len() as f64;
        let mut best: Option<(usize, f64, f64)> = None;
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(rows.len());
        for &feature in &features {
            pairs.clear();
            pairs.extend(rows.iter().map(|&i| (self.x[(i, feature)], self.y[i])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_sum = 0.0;
            for k in 0..pairs.len() - 1 {
                left_sum += pairs[k].1;
                let n_left = k + 1;
                let n_right = pairs.len() - n_left;
                if n_left < MIN_LEAF || n_right < MIN_LEAF {
                    continue;
                }
                if pairs[k].0 == pairs[k + 1].0 {
                    continue;
                }
                let right_sum = total - left_sum;
                let score = left_sum * left_sum / n_left as f64
                    + right_sum * right_sum / n_right as f64;
                if best.map_or(true, |(_, _, s)| score > s) {
                    let threshold = 0.5 * (pairs[k].0 + pairs[k + 1].0);
                    best = Some((feature, threshold, score));
                }
            }
        }
        // require a strict improvement over the unsplit node
        best.and_then(|(feature, threshold, score)| {
            if score > total * total / n + 1e-12 {
                Some((feature, threshold))
            } else {
                None
            }
        })
    }
}

fn is_pure(y: &[f64], rows: &[usize]) -> bool {
    let first = y[rows[0]];
    rows.iter().all(|&i| y[i] == first)
}

/// Default split candidates per node: p/3 for regression, sqrt(p) for
/// probability trees (both rounded up).
pub fn default_mtry(p: usize, task: Task) -> usize {
    let m = match task {
        Task::Regression => (p as f64 / 3.0).ceil() as usize,
        Task::BinaryProbability => (p as f64).sqrt().ceil() as usize,
    };
    m.max(1)
}

pub fn fit(
    x: &ArrayView2<f64>,
    y: &[f64],
    task: Task,
    mtry: Option<usize>,
    n_trees: usize,
    seed: u64,
) -> ForestModel {
    let builder = Builder {
        x,
        y,
        mtry: mtry.unwrap_or_else(|| default_mtry(x.ncols(), task)),
    };
    let trees: Vec<Tree> = (0..n_trees)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, Stream::Tree, k as u64));
            builder.grow(&mut rng)
        })
        .collect();
    ForestModel { trees }
}
