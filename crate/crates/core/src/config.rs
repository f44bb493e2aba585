//! Pipeline configuration: a TOML file of flat `key = value` sections.
//! Every key is optional; unknown sections or keys are rejected. The
//! grammar and defaults are listed in `docs/config.md`.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::data::{gen_synthetic, load_cache, load_idx, Dataset};
use crate::error::{Error, Result};
use crate::gate::{CommitteeSpec, GateHyper, GateKind};
use crate::model_spec::ModelSpec;
use crate::nn::{KdConfig, KdMode, TrainConfig};
use crate::rl::{CompressConfig, RewardParams};
use crate::runtime::{NetMode, NetProfile};

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data: DataSection,
    pub teacher: TeacherSection,
    pub train: TrainSection,
    pub compress: CompressSection,
    pub gate: GateSection,
    pub bench: BenchSection,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// `synthetic`, `idx` or `cache`.
    pub source: String,
    pub classes: usize,
    pub per_class: usize,
    /// Sample shape such as `1x8x8`.
    pub dims: String,
    pub separation: f64,
    pub seed: u64,
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    /// Keep only the first `limit` samples (0 keeps all).
    pub limit: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            source: "synthetic".into(),
            classes: 4,
            per_class: 300,
            dims: "1x8x8".into(),
            separation: 6.0,
            seed: 0,
            images: None,
            labels: None,
            cache: None,
            limit: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherSection {
    /// Layer lines separated by `;`, e.g. `conv 3 1 1 16; relu; dense 10`.
    pub arch: String,
    pub seed: u64,
}

impl Default for TeacherSection {
    fn default() -> Self {
        TeacherSection {
            arch: "conv 3 1 1 8; relu; conv 3 1 1 8; relu; conv 3 1 1 8; relu; dense 32; relu; dense 4"
                .into(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            seed: d.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompressSection {
    pub episodes: usize,
    pub batch_size: usize,
    pub policy_lr: f64,
    pub baseline_decay: f64,
    pub hidden_width: usize,
    pub gru_layers: usize,
    pub alpha: f64,
    pub beta: f64,
    pub c0: f64,
    pub a0: f64,
    pub val_fraction: f64,
    pub seed: u64,
    pub distill_epochs: usize,
    pub distill_batch_size: usize,
    pub distill_lr: f32,
    /// `logit_kl`, `sp` or `combined`.
    pub kd_mode: String,
    pub temperature: f64,
    pub kl_weight: f64,
    pub sp_weight: f64,
}

impl Default for CompressSection {
    fn default() -> Self {
        let c = CompressConfig::default();
        let kd = KdConfig::default();
        CompressSection {
            episodes: c.episodes,
            batch_size: c.batch_size,
            policy_lr: c.policy_lr,
            baseline_decay: c.baseline_decay,
            hidden_width: c.hidden_width,
            gru_layers: c.gru_layers,
            alpha: c.reward.alpha,
            beta: c.reward.beta,
            c0: c.reward.c0,
            a0: c.reward.a0,
            val_fraction: c.val_fraction,
            seed: c.seed,
            distill_epochs: c.distill.epochs,
            distill_batch_size: c.distill.batch_size,
            distill_lr: c.distill.learning_rate,
            kd_mode: kd_mode_name(kd.mode).into(),
            temperature: kd.temperature,
            kl_weight: kd.kl_weight,
            sp_weight: kd.sp_weight,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateSection {
    /// `svm`, `knn` or `rf`.
    pub kind: String,
    pub svm_epochs: usize,
    pub svm_lambda: f64,
    pub knn_k: usize,
    pub rf_trees: usize,
    pub rf_depth: usize,
    pub rf_max_features: usize,
    /// Fraction of the normal selection drawn at random before committee
    /// scoring.
    pub qbc_r: f64,
    pub seed: u64,
}

impl Default for GateSection {
    fn default() -> Self {
        let h = GateHyper::default();
        GateSection {
            kind: "svm".into(),
            svm_epochs: h.svm_epochs,
            svm_lambda: h.svm_lambda,
            knn_k: h.knn_k,
            rf_trees: h.rf_trees,
            rf_depth: h.rf_depth,
            rf_max_features: h.rf_max_features,
            qbc_r: 0.5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    /// `real` or `simulated`.
    pub mode: String,
    pub rtt_ms: f64,
    pub bandwidth_bytes_per_s: f64,
    pub edge_flops_per_s: f64,
}

impl Default for BenchSection {
    fn default() -> Self {
        let p = NetProfile::default();
        BenchSection {
            mode: p.mode.to_string(),
            rtt_ms: p.rtt_ms,
            bandwidth_bytes_per_s: p.bandwidth_bytes_per_s,
            edge_flops_per_s: p.edge_flops_per_s,
        }
    }
}

fn kd_mode_name(m: KdMode) -> &'static str {
    match m {
        KdMode::LogitKl => "logit_kl",
        KdMode::SimilarityPreserving => "sp",
        KdMode::Combined => "combined",
    }
}

fn parse_dims(s: &str) -> Result<Vec<usize>> {
    s.split('x')
        .map(|d| match d.trim().parse::<usize>() {
            Ok(v) if v > 0 => Ok(v),
            _ => Err(Error::Config(format!("data.dims: bad dimension list {s:?}"))),
        })
        .collect()
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Config::parse(&text)
    }

    /// Check every section converts; errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        self.train_config()?;
        self.compress_config()?;
        self.gate_kind()?;
        self.gate_hyper()?;
        self.net_profile()?;
        parse_dims(&self.data.dims)?;
        if !(self.gate.qbc_r > 0.0 && self.gate.qbc_r < 1.0) {
            return Err(Error::Config("gate.qbc_r must be in (0, 1)".into()));
        }
        match self.data.source.as_str() {
            "synthetic" | "idx" | "cache" => Ok(()),
            s => Err(Error::Config(format!("data.source: unknown source {s:?}"))),
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        if t.epochs == 0 || t.batch_size == 0 {
            return Err(Error::Config("train.epochs and train.batch_size must be positive".into()));
        }
        if !(t.learning_rate >= 0.0 && t.learning_rate.is_finite()) {
            return Err(Error::Config("train.learning_rate must be nonnegative".into()));
        }
        Ok(TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            seed: t.seed,
            kd: None,
        })
    }

    pub fn kd_config(&self) -> Result<KdConfig> {
        let c = &self.compress;
        let mode = match c.kd_mode.as_str() {
            "logit_kl" => KdMode::LogitKl,
            "sp" => KdMode::SimilarityPreserving,
            "combined" => KdMode::Combined,
            m => return Err(Error::Config(format!("compress.kd_mode: unknown mode {m:?}"))),
        };
        let kd = KdConfig {
            mode,
            temperature: c.temperature,
            kl_weight: c.kl_weight,
            sp_weight: c.sp_weight,
        };
        kd.validate().map_err(|e| Error::Config(format!("compress: {e}")))?;
        Ok(kd)
    }

    pub fn compress_config(&self) -> Result<CompressConfig> {
        let c = &self.compress;
        let cfg = CompressConfig {
            episodes: c.episodes,
            batch_size: c.batch_size,
            policy_lr: c.policy_lr,
            baseline_decay: c.baseline_decay,
            hidden_width: c.hidden_width,
            gru_layers: c.gru_layers,
            distill: TrainConfig {
                epochs: c.distill_epochs,
                batch_size: c.distill_batch_size,
                learning_rate: c.distill_lr,
                seed: c.seed,
                kd: Some(self.kd_config()?),
            },
            reward: RewardParams {
                alpha: c.alpha,
                beta: c.beta,
                c0: c.c0,
                a0: c.a0,
            },
            val_fraction: c.val_fraction,
            seed: c.seed,
        };
        cfg.validate().map_err(|e| Error::Config(format!("compress: {e}")))?;
        if c.distill_epochs == 0 || c.distill_batch_size == 0 {
            return Err(Error::Config("compress.distill_epochs and distill_batch_size must be positive".into()));
        }
        if !(c.val_fraction > 0.0 && c.val_fraction < 1.0) {
            return Err(Error::Config("compress.val_fraction must be in (0, 1)".into()));
        }
        Ok(cfg)
    }

    pub fn gate_kind(&self) -> Result<GateKind> {
        self.gate
            .kind
            .parse()
            .map_err(|_| Error::Config(format!("gate.kind: unknown kind {:?}", self.gate.kind)))
    }

    pub fn gate_hyper(&self) -> Result<GateHyper> {
        let g = &self.gate;
        if g.knn_k == 0 || g.rf_trees == 0 || g.rf_depth == 0 || g.svm_epochs == 0 {
            return Err(Error::Config("gate: knn_k, rf_trees, rf_depth and svm_epochs must be positive".into()));
        }
        if !(g.svm_lambda > 0.0) {
            return Err(Error::Config("gate.svm_lambda must be positive".into()));
        }
        Ok(GateHyper {
            svm_epochs: g.svm_epochs,
            svm_lambda: g.svm_lambda,
            knn_k: g.knn_k,
            rf_trees: g.rf_trees,
            rf_depth: g.rf_depth,
            rf_max_features: g.rf_max_features,
        })
    }

    pub fn committee(&self) -> CommitteeSpec {
        CommitteeSpec {
            seed: self.gate.seed,
            ..CommitteeSpec::default()
        }
    }

    pub fn net_profile(&self) -> Result<NetProfile> {
        let b = &self.bench;
        let p = NetProfile {
            mode: b.mode.parse::<NetMode>()?,
            rtt_ms: b.rtt_ms,
            bandwidth_bytes_per_s: b.bandwidth_bytes_per_s,
            edge_flops_per_s: b.edge_flops_per_s,
        };
        p.validate().map_err(|e| Error::Config(format!("bench: {e}")))?;
        Ok(p)
    }

    /// Teacher architecture for data of the given shape.
    pub fn teacher_spec(&self, input_dims: &[usize], class_count: usize) -> Result<ModelSpec> {
        let dims: Vec<String> = input_dims.iter().map(|d| d.to_string()).collect();
        let text = format!("input {} classes {class_count}; {}", dims.join("x"), self.teacher.arch);
        text.parse()
            .map_err(|e: Error| Error::Config(format!("teacher.arch: {e}")))
    }

    /// Dataset named by the `data` section. `idx` data are stratified
    /// 70/10/20 with `data.seed`.
    pub fn load_data(&self) -> Result<Dataset> {
        let d = &self.data;
        let path = |p: &Option<PathBuf>, key: &str| {
            p.clone()
                .ok_or_else(|| Error::Config(format!("data.{key} is required for source {:?}", d.source)))
        };
        let mut data = match d.source.as_str() {
            "synthetic" => gen_synthetic(d.classes, d.per_class, &parse_dims(&d.dims)?, d.separation, d.seed)?,
            "idx" => {
                let mut data = load_idx(&path(&d.images, "images")?, &path(&d.labels, "labels")?)?;
                if d.limit > 0 && d.limit < data.len() {
                    data = data.subset(&(0..d.limit).collect::<Vec<_>>());
                }
                data.stratify(0.7, 0.1, d.seed)?;
                return Ok(data);
            }
            "cache" => load_cache(&path(&d.cache, "cache")?)?,
            s => return Err(Error::Config(format!("data.source: unknown source {s:?}"))),
        };
        if d.limit > 0 && d.limit < data.len() {
            data = data.subset(&(0..d.limit).collect::<Vec<_>>());
        }
        Ok(data)
    }
}
