use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::model_spec::{compression_ratio, describe, encode_state, realize, ModelSpec};
use crate::nn::{distill, evaluate, KdConfig, Network, TrainConfig};
use crate::rl::policy::Policy;
use crate::rl::reinforce::{reinforce_update, reward, Baseline, Episode, RewardParams};

#[derive(Clone, Debug, PartialEq)]
pub struct CompressConfig {
    pub episodes: usize,
    /// Episodes per policy update.
    pub batch_size: usize,
    pub policy_lr: f64,
    pub baseline_decay: f64,
    pub hidden_width: usize,
    pub gru_layers: usize,
    /// Per-candidate distillation settings; `seed` is offset by the episode
    /// index.
    pub distill: TrainConfig,
    pub reward: RewardParams,
    /// Fraction of the training split held out for accuracy when the
    /// dataset carries no validation split.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for CompressConfig {
    fn default() -> Self {
        CompressConfig {
            episodes: 30,
            batch_size: 3,
            policy_lr: 1e-4,
            baseline_decay: 0.7,
            hidden_width: 64,
            gru_layers: 2,
            distill: TrainConfig {
                epochs: 3,
                batch_size: 32,
                learning_rate: 0.05,
                seed: 0,
                kd: Some(KdConfig::default()),
            },
            reward: RewardParams::default(),
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

impl CompressConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 || self.batch_size == 0 || self.batch_size > self.episodes {
            return Err(Error::input(format!(
                "need 1 <= batch_size ({}) <= episodes ({})",
                self.batch_size, self.episodes
            )));
        }
        if !(self.policy_lr > 0.0) {
            return Err(Error::input("policy_lr must be positive"));
        }
        if !(self.baseline_decay > 0.0 && self.baseline_decay < 1.0) {
            return Err(Error::input("baseline_decay must be in (0, 1)"));
        }
        if self.hidden_width == 0 || self.gru_layers == 0 {
            return Err(Error::input("policy needs positive width and depth"));
        }
        self.reward.validate()
    }
}

/// Teacher layer descriptors encoded as policy input states.
pub fn teacher_states(spec: &ModelSpec) -> Vec<Vec<f64>> {
    spec.layers.iter().map(encode_state).collect()
}

/// Actions, their log-probabilities, the resulting student spec and the
/// per-layer coercion flags for one rollout over the teacher's layers.
pub struct Sampled {
    pub actions: Vec<usize>,
    pub logprobs: Vec<f64>,
    pub student_spec: ModelSpec,
    pub coerced: Vec<bool>,
}

pub fn sample_episode<R: Rng>(policy: &Policy, teacher_spec: &ModelSpec, rng: &mut R) -> Result<Sampled> {
    let states = teacher_states(teacher_spec);
    let (actions, logprobs) = policy.sample(&states, rng)?;
    let (student_spec, coerced) = teacher_spec.apply_actions(&actions)?;
    Ok(Sampled {
        actions,
        logprobs,
        student_spec,
        coerced,
    })
}

pub struct CompressResult {
    pub best_student: Network,
    pub best_episode: usize,
    pub history: Vec<Episode>,
    pub policy: Policy,
}

/// Split `data` into (distillation set, accuracy set).
pub fn train_val(data: &Dataset, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let train = data.split(Split::Train);
    let val = data.split(Split::Val);
    if !val.is_empty() && !train.is_empty() {
        return Ok((train, val));
    }
    let mut pool = if train.is_empty() { data.clone() } else { train };
    pool.stratify(1.0 - val_fraction, val_fraction, seed)?;
    let val = pool.split(Split::Val);
    let train = pool.split(Split::Train);
    if train.is_empty() || val.is_empty() {
        return Err(Error::input("dataset too small for a train/validation split"));
    }
    Ok((train, val))
}

fn evaluate_candidate(
    teacher: &Network,
    sampled: Sampled,
    index: usize,
    cfg: &CompressConfig,
    train: &Dataset,
    val: &Dataset,
) -> Result<(Episode, Network)> {
    let seed = cfg.seed.wrapping_add(1 + index as u64);
    let student = realize(&sampled.student_spec, seed)?.network;
    let mut dcfg = cfg.distill.clone();
    dcfg.seed = dcfg.seed.wrapping_add(index as u64);
    dcfg.batch_size = dcfg.batch_size.min(train.len());
    let student = distill(teacher, student, train, &dcfg)?;
    let accuracy = evaluate(&student, val)?;
    let compression = compression_ratio(teacher, &student)?;
    let episode = Episode {
        index,
        actions: sampled.actions,
        logprobs: sampled.logprobs,
        student_spec: sampled.student_spec,
        compression,
        accuracy,
        reward: reward(compression, accuracy, &cfg.reward),
        coerced: sampled.coerced,
    };
    Ok((episode, student))
}

/// Run the compression search with a freshly initialized policy.
pub fn compress(teacher: &Network, cfg: &CompressConfig, data: &Dataset) -> Result<CompressResult> {
    let policy = Policy::new(cfg.hidden_width, cfg.gru_layers, cfg.seed);
    compress_with_policy(teacher, cfg, data, policy, |_| {})
}

/// Run the compression search from `policy`, calling `on_episode` after
/// every evaluated episode, in episode order.
///
/// Every batch of episodes is sampled from the current policy, then the
/// candidates are realized, distilled and scored (in parallel; each is
/// seeded by its index), then the policy takes one REINFORCE step on the
/// batch. The best-reward student seen so far is kept; ties keep the
/// earlier one.
pub fn compress_with_policy(
    teacher: &Network,
    cfg: &CompressConfig,
    data: &Dataset,
    mut policy: Policy,
    mut on_episode: impl FnMut(&Episode),
) -> Result<CompressResult> {
    cfg.validate()?;
    let (train, val) = train_val(data, cfg.val_fraction, cfg.seed)?;
    let teacher_spec = describe(teacher);
    let states = teacher_states(&teacher_spec);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut baseline = Baseline::new(cfg.baseline_decay);
    let mut history: Vec<Episode> = Vec::with_capacity(cfg.episodes);
    let mut best: Option<(f64, usize, Network)> = None;

    let mut start = 0;
    while start < cfg.episodes {
        let end = (start + cfg.batch_size).min(cfg.episodes);
        let sampled = (start..end)
            .map(|i| sample_episode(&policy, &teacher_spec, &mut rng).map(|s| (i, s)))
            .collect::<Result<Vec<_>>>()?;
        let evaluated = sampled
            .into_par_iter()
            .map(|(i, s)| evaluate_candidate(teacher, s, i, cfg, &train, &val))
            .collect::<Result<Vec<_>>>()?;

        let mut batch = Vec::with_capacity(evaluated.len());
        for (episode, student) in evaluated {
            if best.as_ref().is_none_or(|(r, _, _)| episode.reward > *r) {
                best = Some((episode.reward, episode.index, student));
            }
            on_episode(&episode);
            batch.push(episode);
        }
        let rewards: Vec<f64> = batch.iter().map(|e| e.reward).collect();
        let b = baseline
            .value()
            .unwrap_or_else(|| rewards.iter().sum::<f64>() / rewards.len() as f64);
        policy = reinforce_update(&policy, &states, &batch, b, cfg.policy_lr)?;
        baseline.update(&rewards)?;
        history.extend(batch);
        start = end;
    }

    let (_, best_episode, best_student) = best.expect("at least one episode");
    Ok(CompressResult {
        best_student,
        best_episode,
        history,
        policy,
    })
}

pub const HISTORY_HEADER: &str = "episode,C,A,R,actions";

/// One row per episode: `episode,C,A,R,actions` with actions dash-joined.
pub fn history_csv(history: &[Episode]) -> String {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for e in history {
        let actions: Vec<String> = e.actions.iter().map(|a| a.to_string()).collect();
        writeln!(
            out,
            "{},{},{},{},{}",
            e.index,
            e.compression,
            e.accuracy,
            e.reward,
            actions.join("-")
        )
        .unwrap();
    }
    out
}
