use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::gate::{GateLabel, GateSample};

/// Linear max-margin classifier `sign(w . x + b)`; positive means normal.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSvm {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearSvm {
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    /// Probability of `normal` through a logistic link on the margin.
    pub fn prob_normal(&self, x: &[f64]) -> f64 {
        1.0 / (1.0 + (-self.margin(x)).exp())
    }

    /// Hinge-loss subgradient descent with L2 penalty `lambda` and step size
    /// `1 / (1 + lambda t)`, on standardized features. The learned hyperplane is mapped back to
    /// raw feature space before returning.
    pub fn fit(samples: &[GateSample], epochs: usize, lambda: f64, seed: u64) -> LinearSvm {
        let d = samples[0].features.len();
        let n = samples.len() as f64;
        let mut mean = vec![0.0; d];
        for s in samples {
            for (m, v) in mean.iter_mut().zip(&s.features) {
                *m += v / n;
            }
        }
        let mut scale = vec![0.0; d];
        for s in samples {
            for ((sc, v), m) in scale.iter_mut().zip(&s.features).zip(&mean) {
                *sc += (v - m) * (v - m) / n;
            }
        }
        for sc in &mut scale {
            *sc = if *sc > 1e-12 { sc.sqrt() } else { 1.0 };
        }
        let xs: Vec<Vec<f64>> = samples
            .iter()
            .map(|s| s.features.iter().zip(&mean).zip(&scale).map(|((v, m), sc)| (v - m) / sc).collect())
            .collect();
        let ys: Vec<f64> = samples
            .iter()
            .map(|s| if s.label == GateLabel::Normal { 1.0 } else { -1.0 })
            .collect();

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut w = vec![0.0; d];
        let mut b = 0.0;
        let mut t = 0.0f64;
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            for &i in &order {
                t += 1.0;
                let eta = 1.0 / (1.0 + lambda * t);
                let m = ys[i] * (b + w.iter().zip(&xs[i]).map(|(a, v)| a * v).sum::<f64>());
                let shrink = 1.0 - eta * lambda;
                for wj in w.iter_mut() {
                    *wj *= shrink;
                }
                if m < 1.0 {
                    for (wj, v) in w.iter_mut().zip(&xs[i]) {
                        *wj += eta * ys[i] * v;
                    }
                    b += eta * ys[i];
                }
            }
        }
        let weights: Vec<f64> = w.iter().zip(&scale).map(|(a, sc)| a / sc).collect();
        let bias = b - weights.iter().zip(&mean).map(|(a, m)| a * m).sum::<f64>();
        LinearSvm { weights, bias }
    }
}
