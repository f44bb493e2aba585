use crate::error::{Error, Result};
use crate::model_spec::ModelSpec;
use crate::rl::policy::Policy;

/// Exponents are clamped to this magnitude before `exp`.
pub const EXPONENT_CLAMP: f64 = 700.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardParams {
    pub alpha: f64,
    pub beta: f64,
    /// Compression threshold.
    pub c0: f64,
    /// Accuracy threshold.
    pub a0: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        RewardParams {
            alpha: 20.0,
            beta: 15.0,
            c0: 0.3,
            a0: 0.7,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.beta > 0.0) {
            return Err(Error::input("alpha and beta must be positive"));
        }
        if !(0.0..1.0).contains(&self.c0) || !(0.0..=1.0).contains(&self.a0) {
            return Err(Error::input(format!(
                "thresholds out of range: c0 = {}, a0 = {}",
                self.c0, self.a0
            )));
        }
        Ok(())
    }
}

/// `exp(alpha (C - c0)) * exp(beta (A - a0))`.
pub fn reward(compression: f64, accuracy: f64, p: &RewardParams) -> f64 {
    let rc = (p.alpha * (compression - p.c0)).clamp(-EXPONENT_CLAMP, EXPONENT_CLAMP).exp();
    let ra = (p.beta * (accuracy - p.a0)).clamp(-EXPONENT_CLAMP, EXPONENT_CLAMP).exp();
    rc * ra
}

/// `decay * b + (1 - decay) * mean(rewards)`.
pub fn baseline_update(b: f64, rewards: &[f64], decay: f64) -> Result<f64> {
    if rewards.is_empty() {
        return Err(Error::input("empty reward batch"));
    }
    if !(decay > 0.0 && decay < 1.0) {
        return Err(Error::input(format!("decay must be in (0, 1), got {decay}")));
    }
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    Ok(decay * b + (1.0 - decay) * mean)
}

/// Exponential moving average of past rewards; starts at the first batch
/// mean.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Baseline {
    value: Option<f64>,
    decay: f64,
}

impl Baseline {
    pub fn new(decay: f64) -> Baseline {
        Baseline { value: None, decay }
    }

    pub fn value(&self) -> Option<f64> {
        self.value
    }

    pub fn update(&mut self, rewards: &[f64]) -> Result<f64> {
        let next = match self.value {
            None => {
                baseline_update(0.0, rewards, self.decay)?;
                rewards.iter().sum::<f64>() / rewards.len() as f64
            }
            Some(b) => baseline_update(b, rewards, self.decay)?,
        };
        self.value = Some(next);
        Ok(next)
    }
}

/// One compression rollout and its outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub index: usize,
    /// Pool index chosen for each teacher layer.
    pub actions: Vec<usize>,
    pub logprobs: Vec<f64>,
    pub student_spec: ModelSpec,
    pub compression: f64,
    pub accuracy: f64,
    pub reward: f64,
    /// Actions replaced by "keep" because they targeted the classifier head.
    pub coerced: Vec<bool>,
}

/// One gradient-ascent step on
/// `J = (1/N) sum_i (R_i - b) sum_t log pi(a_it | s_it)`.
///
/// Each episode's log-probability gradient is computed separately and
/// weighted by its advantage before averaging; episodes whose reward equals
/// the baseline contribute nothing and parameters with a zero gradient are
/// left untouched.
pub fn reinforce_update(
    policy: &Policy,
    states: &[Vec<f64>],
    episodes: &[Episode],
    baseline: f64,
    lr: f64,
) -> Result<Policy> {
    if episodes.is_empty() {
        return Err(Error::input("empty episode batch"));
    }
    let n = episodes.len() as f64;
    let mut total = policy.zeros_like();
    for ep in episodes {
        let advantage = ep.reward - baseline;
        if advantage == 0.0 {
            continue;
        }
        let (_, g) = policy.log_prob_grad(states, &ep.actions)?;
        for (acc, blk) in total.blocks_mut().into_iter().zip(g.blocks()) {
            for (a, v) in acc.iter_mut().zip(blk.1) {
                *a += advantage * v;
            }
        }
    }
    let mut next = policy.clone();
    let names: Vec<String> = policy.blocks().into_iter().map(|(n, _)| n).collect();
    for ((param, grad), name) in next.blocks_mut().into_iter().zip(total.blocks()).zip(names) {
        for (p, g) in param.iter_mut().zip(grad.1) {
            let step = g / n;
            if !step.is_finite() {
                return Err(Error::numeric(name, "non-finite policy gradient"));
            }
            if step != 0.0 {
                *p += lr * step;
            }
        }
        if param.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(name, "policy parameter became non-finite"));
        }
    }
    Ok(next)
}
