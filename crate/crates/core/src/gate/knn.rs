use crate::gate::{GateLabel, GateSample};

/// k-nearest-neighbour vote over a stored reference set (Euclidean
/// distance; equal distances resolved by reference order).
#[derive(Clone, Debug, PartialEq)]
pub struct Knn {
    pub k: usize,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<GateLabel>,
}

impl Knn {
    pub fn fit(samples: &[GateSample], k: usize) -> Knn {
        Knn {
            k: k.max(1),
            features: samples.iter().map(|s| s.features.clone()).collect(),
            labels: samples.iter().map(|s| s.label).collect(),
        }
    }

    /// Fraction of the `k` nearest references labelled normal.
    pub fn prob_normal(&self, x: &[f64]) -> f64 {
        let mut dists: Vec<(f64, usize)> = self
            .features
            .iter()
            .enumerate()
            .map(|(i, f)| (f.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
            .collect();
        let k = self.k.min(dists.len());
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < dists.len() {
            dists.select_nth_unstable_by(k - 1, cmp);
        }
        let normal = dists[..k]
            .iter()
            .filter(|(_, i)| self.labels[*i] == GateLabel::Normal)
            .count();
        normal as f64 / k as f64
    }
}
