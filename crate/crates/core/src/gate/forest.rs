use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gate::{GateLabel, GateSample};

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Leaf {
        /// Fraction of training samples at this leaf labelled normal.
        prob_normal: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        /// Taken when `x[feature] <= threshold`.
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn prob_normal(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { prob_normal } => return prob_normal,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }
}

/// Bagged depth-limited Gini trees with random feature subsets per split.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomForest {
    pub trees: Vec<Tree>,
}

struct Builder<'a> {
    samples: &'a [GateSample],
    max_depth: usize,
    max_features: usize,
    nodes: Vec<Node>,
}

fn gini(normal: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let p = normal as f64 / total as f64;
    2.0 * p * (1.0 - p)
}

impl Builder<'_> {
    fn is_normal(&self, i: usize) -> bool {
        self.samples[i].label == GateLabel::Normal
    }

    fn build<R: Rng>(&mut self, rows: &[usize], depth: usize, rng: &mut R) -> usize {
        let id = self.nodes.len();
        let normal = rows.iter().filter(|&&i| self.is_normal(i)).count();
        let leaf = Node::Leaf {
            prob_normal: normal as f64 / rows.len() as f64,
        };
        self.nodes.push(leaf.clone());
        if depth >= self.max_depth || normal == 0 || normal == rows.len() || rows.len() < 2 {
            return id;
        }
        let width = self.samples[0].features.len();
        let features = index::sample(rng, width, self.max_features.min(width)).into_vec();
        let parent = gini(normal, rows.len());
        let mut best: Option<(f64, usize, f64)> = None;
        for &f in &features {
            let mut sorted: Vec<(f64, bool)> = rows
                .iter()
                .map(|&i| (self.samples[i].features[f], self.is_normal(i)))
                .collect();
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_normal = 0;
            for k in 0..sorted.len() - 1 {
                if sorted[k].1 {
                    left_normal += 1;
                }
                if sorted[k].0 == sorted[k + 1].0 {
                    continue;
                }
                let nl = k + 1;
                let nr = sorted.len() - nl;
                let impurity = (nl as f64 * gini(left_normal, nl) + nr as f64 * gini(normal - left_normal, nr))
                    / sorted.len() as f64;
                let gain = parent - impurity;
                if gain > 1e-12 && best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, f, 0.5 * (sorted[k].0 + sorted[k + 1].0)));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&i| self.samples[i].features[feature] <= threshold);
        let left = self.build(&l, depth + 1, rng);
        let right = self.build(&r, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

impl RandomForest {
    /// `max_features == 0` selects `round(sqrt(width))` features per split.
    pub fn fit(samples: &[GateSample], trees: usize, max_depth: usize, max_features: usize, seed: u64) -> RandomForest {
        let width = samples[0].features.len();
        let max_features = if max_features == 0 {
            ((width as f64).sqrt().round() as usize).max(1)
        } else {
            max_features
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = samples.len();
        let trees = (0..trees.max(1))
            .map(|_| {
                let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                let mut b = Builder {
                    samples,
                    max_depth,
                    max_features,
                    nodes: Vec::new(),
                };
                b.build(&rows, 0, &mut rng);
                Tree { nodes: b.nodes }
            })
            .collect();
        RandomForest { trees }
    }

    /// Mean of the trees' leaf fractions.
    pub fn prob_normal(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.prob_normal(x)).sum::<f64>() / self.trees.len() as f64
    }
}
