use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::loss::{cross_entropy, logit_kl, sp_kd_loss_grad};
use crate::nn::network::{Gradients, Network};
use crate::tensor::{argmax, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KdMode {
    LogitKl,
    SimilarityPreserving,
    Combined,
}

impl KdMode {
    fn uses_logits(self) -> bool {
        matches!(self, KdMode::LogitKl | KdMode::Combined)
    }

    fn uses_similarity(self) -> bool {
        matches!(self, KdMode::SimilarityPreserving | KdMode::Combined)
    }
}

/// Distillation terms added on top of cross-entropy:
/// `CE + kl_weight * T^2 * KL + sp_weight * SP`, each term only when the
/// mode includes it and its weight is nonzero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KdConfig {
    pub mode: KdMode,
    pub temperature: f64,
    pub kl_weight: f64,
    pub sp_weight: f64,
}

impl Default for KdConfig {
    fn default() -> Self {
        KdConfig {
            mode: KdMode::Combined,
            temperature: 4.0,
            kl_weight: 0.5,
            sp_weight: 1.0,
        }
    }
}

impl KdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::input(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if !(self.kl_weight >= 0.0 && self.sp_weight >= 0.0) {
            return Err(Error::input("distillation weights must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub seed: u64,
    pub kd: Option<KdConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            learning_rate: 0.05,
            seed: 0,
            kd: None,
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is accepted (it freezes the parameters).
    pub fn validate(&self, dataset_len: usize) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::input("epochs must be positive"));
        }
        if self.batch_size == 0 || self.batch_size > dataset_len {
            return Err(Error::input(format!(
                "batch_size {} must be in 1..={dataset_len}",
                self.batch_size
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::input(format!("bad learning rate {}", self.learning_rate)));
        }
        if let Some(kd) = &self.kd {
            kd.validate()?;
        }
        Ok(())
    }
}

/// Training objective for one gradient evaluation.
#[derive(Clone, Copy, Debug)]
pub enum Objective<'a> {
    CrossEntropy,
    Distill {
        teacher_logits: &'a Tensor,
        teacher_features: &'a Tensor,
        kd: &'a KdConfig,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Loss, gradients and per-row predictions for one batch.
pub struct Step {
    pub loss: f64,
    pub grads: Gradients,
    pub predictions: Vec<usize>,
}

pub fn step(net: &Network, batch: &Tensor, labels: &[usize], objective: Objective<'_>) -> Result<Step> {
    let trace = net.trace(batch)?;
    let n = trace.batch;
    let last = net.layers().len();
    let logits = Tensor::from_parts_unchecked(vec![n, net.class_count()], trace.acts[last].clone());
    let predictions = (0..n).map(|i| argmax(logits.row(i))).collect();
    let (mut loss, mut logit_grad) = cross_entropy(&logits, labels)?;
    let mut feature_grad = None;

    if let Objective::Distill {
        teacher_logits,
        teacher_features,
        kd,
    } = objective
    {
        if kd.mode.uses_logits() && kd.kl_weight != 0.0 {
            let (kl, g) = logit_kl(&logits, teacher_logits, kd.temperature)?;
            loss += kd.kl_weight * kl;
            let w = kd.kl_weight as f32;
            for (a, b) in logit_grad.iter_mut().zip(g) {
                *a += w * b;
            }
        }
        if kd.mode.uses_similarity() && kd.sp_weight != 0.0 {
            let feats_data = if last == 0 { &trace.acts[0] } else { &trace.acts[last - 1] };
            let width = feats_data.len() / n;
            let feats = Tensor::from_parts_unchecked(vec![n, width], feats_data.clone());
            let (sp, g) = sp_kd_loss_grad(teacher_features, &feats)?;
            loss += kd.sp_weight * sp;
            let w = kd.sp_weight as f32;
            feature_grad = Some(g.into_iter().map(|v| w * v).collect::<Vec<f32>>());
        }
    }

    if !loss.is_finite() {
        return Err(Error::numeric(format!("layer {}", last.saturating_sub(1)), "non-finite loss"));
    }
    let grads = net.backward(&trace, logit_grad, feature_grad.as_deref());
    for (i, g) in grads.layers.iter().enumerate() {
        if let Some(g) = g {
            if g.weight.iter().chain(&g.bias).any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!("layer {i}"), "non-finite gradient"));
            }
        }
    }
    Ok(Step {
        loss,
        grads,
        predictions,
    })
}

/// Gradients of the objective w.r.t. every parameter.
pub fn grad(net: &Network, batch: &Tensor, labels: &[usize], objective: Objective<'_>) -> Result<Gradients> {
    step(net, batch, labels, objective).map(|s| s.grads)
}

fn check_dataset(net: &Network, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::input("empty dataset"));
    }
    if data.sample_dims() != net.input_dims() {
        return Err(Error::shape(format!(
            "dataset samples {:?} vs network input {:?}",
            data.sample_dims(),
            net.input_dims()
        )));
    }
    if let Some(&y) = data.labels().iter().find(|&&y| y >= net.class_count()) {
        return Err(Error::input(format!("label {y} out of range for {} classes", net.class_count())));
    }
    Ok(())
}

fn run_sgd(
    mut net: Network,
    data: &Dataset,
    cfg: &TrainConfig,
    teacher: Option<(&Network, &KdConfig)>,
) -> Result<(Network, Vec<EpochStats>)> {
    check_dataset(&net, data)?;
    cfg.validate(data.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.samples().gather_rows(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels()[i]).collect();
            let s = match teacher {
                None => step(&net, &batch, &labels, Objective::CrossEntropy)?,
                Some((t, kd)) => {
                    let (tl, tf) = t.forward(&batch)?;
                    step(
                        &net,
                        &batch,
                        &labels,
                        Objective::Distill {
                            teacher_logits: &tl,
                            teacher_features: &tf,
                            kd,
                        },
                    )?
                }
            };
            loss_sum += s.loss * chunk.len() as f64;
            correct += s.predictions.iter().zip(&labels).filter(|(p, y)| p == y).count();
            net.sgd_step(&s.grads, cfg.learning_rate);
        }
        history.push(EpochStats {
            epoch,
            loss: loss_sum / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
        });
    }
    Ok((net, history))
}

/// Mini-batch SGD on cross-entropy. Batches are reshuffled each epoch from
/// a generator seeded with `cfg.seed`; `cfg.kd` is ignored here.
pub fn train(net: Network, data: &Dataset, cfg: &TrainConfig) -> Result<(Network, Vec<EpochStats>)> {
    run_sgd(net, data, cfg, None)
}

/// Train `student` against cross-entropy plus the distillation terms of
/// `cfg.kd` (the default `KdConfig` when unset).
pub fn distill(teacher: &Network, student: Network, data: &Dataset, cfg: &TrainConfig) -> Result<Network> {
    distill_with_history(teacher, student, data, cfg).map(|(n, _)| n)
}

pub fn distill_with_history(
    teacher: &Network,
    student: Network,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Network, Vec<EpochStats>)> {
    if teacher.class_count() != student.class_count() {
        return Err(Error::input(format!(
            "teacher has {} classes, student {}",
            teacher.class_count(),
            student.class_count()
        )));
    }
    if teacher.input_dims() != student.input_dims() {
        return Err(Error::input(format!(
            "teacher input {:?} vs student input {:?}",
            teacher.input_dims(),
            student.input_dims()
        )));
    }
    let kd = cfg.kd.unwrap_or_default();
    run_sgd(student, data, cfg, Some((teacher, &kd)))
}
