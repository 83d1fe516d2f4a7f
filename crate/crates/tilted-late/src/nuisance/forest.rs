//! Random forest regression: axis-aligned trees on bootstrap samples with
//! variance-reduction splits; the prediction is the mean over trees.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestParams {
    pub trees: usize,
    pub min_leaf: usize,
    pub max_depth: usize,
    pub feature_fraction: f64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams { trees: 100, min_leaf: 20, max_depth: 10, feature_fraction: 1.0 }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf(v) => return *v,
                Node::Split { feature, threshold, left, right } => {
                    idx = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForestFit {
    trees: Vec<Tree>,
}

impl ForestFit {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        sum / self.trees.len() as f64
    }
}

struct Builder<'a> {
    x: &'a [&'a [f64]],
    y: &'a [f64],
    params: ForestParams,
    n_features: usize,
    features_per_split: usize,
}

impl<'a> Builder<'a> {
    fn build(&self, rng: &mut ChaCha8Rng) -> Tree {
        let n = self.y.len();
        let sample: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        let mut nodes = Vec::new();
        self.grow(sample, 0, &mut nodes, rng);
        Tree { nodes }
    }

    fn leaf_value(&self, rows: &[usize]) -> f64 {
        rows.iter().map(|&i| self.y[i]).sum::<f64>() / rows.len() as f64
    }

    fn grow(
        &self,
        rows: Vec<usize>,
        depth: usize,
        nodes: &mut Vec<Node>,
        rng: &mut ChaCha8Rng,
    ) -> usize {
        let idx = nodes.len();
        nodes.push(Node::Leaf(0.0));
        if depth >= self.params.max_depth || rows.len() < 2 * self.params.min_leaf {
            nodes[idx] = Node::Leaf(self.leaf_value(&rows));
            return idx;
        }
        let mut features: Vec<usize> = (0..self.n_features).collect();
        features.shuffle(rng);
        features.truncate(self.features_per_split);
        features.sort_unstable(); // shuffle order must not affect the argmax scan

        let total_sum: f64 = rows.iter().map(|&i| self.y[i]).sum();
        let total_n = rows.len() as f64;
        let mut best: Option<(f64, usize, f64)> = None; // (score, feature, threshold)
        let mut sorted: Vec<(f64, f64)> = Vec::with_capacity(rows.len());
        for &feature in &features {
            sorted.clear();
            sorted.extend(rows.iter().map(|&i| (self.x[i][feature], self.y[i])));
            sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let mut left_sum = 0.0;
            for i in 0..sorted.len() - 1 {
                left_sum += sorted[i].1;
                let nl = (i + 1) as f64;
                let nr = total_n - nl;
                if (i + 1) < self.params.min_leaf || (sorted.len() - i - 1) < self.params.min_leaf {
                    continue;
                }
                if sorted[i].0 == sorted[i + 1].0 {
                    continue;
                }
                let right_sum = total_sum - left_sum;
                let score = left_sum * left_sum / nl + right_sum * right_sum / nr;
                if best.map_or(true, |(b, _, _)| score > b) {
                    best = Some((score, feature, 0.5 * (sorted[i].0 + sorted[i + 1].0)));
                }
            }
        }
        let Some((score, feature, threshold)) = best else {
            nodes[idx] = Node::Leaf(self.leaf_value(&rows));
            return idx;
        };
        // no variance reduction means the target is constant on this node
        if score - total_sum * total_sum / total_n <= 1e-12 * total_n {
            nodes[idx] = Node::Leaf(self.leaf_value(&rows));
            return idx;
        }
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            rows.into_iter().partition(|&i| self.x[i][feature] <= threshold);
        let left = self.grow(left_rows, depth + 1, nodes, rng);
        let right = self.grow(right_rows, depth + 1, nodes, rng);
        nodes[idx] = Node::Split { feature, threshold, left, right };
        idx
    }
}

/// Fit a forest; tree `b` draws its randomness from the stream
/// `(seed, b)`, so parallel and serial fits are identical.
pub fn fit_forest(x: &[&[f64]], y: &[f64], params: &ForestParams, seed: u64) -> ForestFit {
    let n_features = x[0].len();
    let features_per_split =
        ((params.feature_fraction * n_features as f64).ceil() as usize).clamp(1, n_features);
    let builder = Builder { x, y, params: *params, n_features, features_per_split };
    let trees = crate::exec::map_indexed(params.trees, |b| {
        let mut rng = stream_rng(seed, &[b as u64]);
        builder.build(&mut rng)
    });
    ForestFit { trees }
}
