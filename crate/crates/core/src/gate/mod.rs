//! Offload gate: labels samples by whether the student gets them right,
//! balances the training set with query-by-committee selection, and trains
//! a small classifier on student logits that decides Local vs Offload.

mod forest;
mod knn;
mod qbc;
mod serialize;
mod svm;

use std::fmt;
use std::str::FromStr;

pub use forest::{Node, RandomForest, Tree};
pub use knn::Knn;
pub use qbc::{committee_entropy, entropy, qbc_score, qbc_select, random_count, Committee, CommitteeSpec};
pub use serialize::{gate_from_bytes, gate_to_bytes, load_gate, save_gate};
pub use svm::LinearSvm;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::tensor::argmax;

/// Gate target: `Complex` samples are the ones the student misclassifies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GateLabel {
    Complex = 0,
    Normal = 1,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GateSample {
    /// Raw student logits.
    pub features: Vec<f64>,
    pub label: GateLabel,
    /// Row of the sample in the dataset it was labelled from.
    pub source_index: usize,
}

/// Complex/normal partition of a dataset under a student.
#[derive(Clone, Debug, PartialEq)]
pub struct Labeling {
    pub complex: Vec<GateSample>,
    pub normal: Vec<GateSample>,
}

impl Labeling {
    /// All samples in source order.
    pub fn samples(&self) -> Vec<GateSample> {
        let mut all: Vec<GateSample> = self.complex.iter().chain(&self.normal).cloned().collect();
        all.sort_by_key(|s| s.source_index);
        all
    }

    pub fn complex_fraction(&self) -> f64 {
        let n = self.complex.len() + self.normal.len();
        if n == 0 {
            0.0
        } else {
            self.complex.len() as f64 / n as f64
        }
    }
}

/// Run the student over `data` and split it into complex (prediction
/// wrong) and normal (prediction right) samples carrying the logits.
pub fn label_samples(student: &Network, data: &Dataset) -> Result<Labeling> {
    let logits = student.logits_for(data)?;
    let mut complex = Vec::new();
    let mut normal = Vec::new();
    for i in 0..data.len() {
        let row = logits.row(i);
        let correct = argmax(row) == data.labels()[i];
        let sample = GateSample {
            features: row.iter().map(|&v| v as f64).collect(),
            label: if correct { GateLabel::Normal } else { GateLabel::Complex },
            source_index: i,
        };
        if correct {
            normal.push(sample);
        } else {
            complex.push(sample);
        }
    }
    Ok(Labeling { complex, normal })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GateKind {
    LinearSvm,
    Knn,
    RandomForest,
}

impl GateKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GateKind::LinearSvm => "svm",
            GateKind::Knn => "knn",
            GateKind::RandomForest => "rf",
        }
    }
}

impl fmt::Display for GateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "svm" | "linear_svm" => Ok(GateKind::LinearSvm),
            "knn" => Ok(GateKind::Knn),
            "rf" | "random_forest" => Ok(GateKind::RandomForest),
            _ => Err(Error::input(format!("unknown gate kind {s:?} (svm, knn, rf)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateHyper {
    pub svm_epochs: usize,
    pub svm_lambda: f64,
    pub knn_k: usize,
    pub rf_trees: usize,
    pub rf_depth: usize,
    /// Features tried per split; 0 means `round(sqrt(width))`.
    pub rf_max_features: usize,
}

impl Default for GateHyper {
    fn default() -> Self {
        GateHyper {
            svm_epochs: 50,
            svm_lambda: 1e-3,
            knn_k: 5,
            rf_trees: 20,
            rf_depth: 6,
            rf_max_features: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GateModel {
    LinearSvm(LinearSvm),
    Knn(Knn),
    RandomForest(RandomForest),
    /// Fixed answer regardless of input; used for reductions and tests.
    Constant { label: GateLabel, width: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OffloadDecision {
    Local,
    Offload,
}

impl GateModel {
    pub fn kind_name(&self) -> &'static str {
        match self {
            GateModel::LinearSvm(_) => "svm",
            GateModel::Knn(_) => "knn",
            GateModel::RandomForest(_) => "rf",
            GateModel::Constant { .. } => "constant",
        }
    }

    /// Expected feature width, when the model fixes one.
    pub fn width(&self) -> Option<usize> {
        match self {
            GateModel::LinearSvm(m) => Some(m.weights.len()),
            GateModel::Knn(m) => m.features.first().map(Vec::len),
            GateModel::RandomForest(_) => None,
            GateModel::Constant { width, .. } => Some(*width),
        }
    }

    /// `[P(complex), P(normal)]`.
    pub fn proba(&self, x: &[f64]) -> [f64; 2] {
        let p = match self {
            GateModel::LinearSvm(m) => m.prob_normal(x),
            GateModel::Knn(m) => m.prob_normal(x),
            GateModel::RandomForest(m) => m.prob_normal(x),
            GateModel::Constant { label, .. } => match label {
                GateLabel::Normal => 1.0,
                GateLabel::Complex => 0.0,
            },
        };
        [1.0 - p, p]
    }

    /// Most probable label; an exact tie goes to `Complex`.
    pub fn predict(&self, x: &[f64]) -> GateLabel {
        match self {
            GateModel::LinearSvm(m) => {
                if m.margin(x) > 0.0 {
                    GateLabel::Normal
                } else {
                    GateLabel::Complex
                }
            }
            GateModel::Constant { label, .. } => *label,
            _ => {
                if self.proba(x)[1] > 0.5 {
                    GateLabel::Normal
                } else {
                    GateLabel::Complex
                }
            }
        }
    }
}

fn check_training_set(samples: &[GateSample]) -> Result<usize> {
    let first = samples.first().ok_or_else(|| Error::input("no gate training samples"))?;
    let width = first.features.len();
    if width == 0 || samples.iter().any(|s| s.features.len() != width) {
        return Err(Error::input("gate samples must share a nonzero feature width"));
    }
    let normals = samples.iter().filter(|s| s.label == GateLabel::Normal).count();
    if normals == 0 || normals == samples.len() {
        return Err(Error::input("gate training needs both complex and normal samples"));
    }
    Ok(width)
}

/// Fit a gate of the given kind. Deterministic for a fixed seed.
pub fn train_gate(samples: &[GateSample], kind: GateKind, hyper: &GateHyper, seed: u64) -> Result<GateModel> {
    check_training_set(samples)?;
    Ok(match kind {
        GateKind::LinearSvm => GateModel::LinearSvm(LinearSvm::fit(samples, hyper.svm_epochs, hyper.svm_lambda, seed)),
        GateKind::Knn => GateModel::Knn(Knn::fit(samples, hyper.knn_k)),
        GateKind::RandomForest => GateModel::RandomForest(RandomForest::fit(
            samples,
            hyper.rf_trees,
            hyper.rf_depth,
            hyper.rf_max_features,
            seed,
        )),
    })
}

/// Normal prediction keeps the sample local; complex sends it to the cloud.
pub fn gate_decide(gate: &GateModel, logits: &[f64]) -> Result<OffloadDecision> {
    if let Some(w) = gate.width() {
        if w != logits.len() {
            return Err(Error::input(format!("gate expects {w} logits, got {}", logits.len())));
        }
    }
    Ok(match gate.predict(logits) {
        GateLabel::Normal => OffloadDecision::Local,
        GateLabel::Complex => OffloadDecision::Offload,
    })
}

/// Binary accuracy and confusion counts, with complex as the positive
/// class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateEval {
    pub accuracy: f64,
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

pub fn evaluate_gate(gate: &GateModel, samples: &[GateSample]) -> GateEval {
    let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
    for s in samples {
        match (gate.predict(&s.features), s.label) {
            (GateLabel::Complex, GateLabel::Complex) => tp += 1,
            (GateLabel::Normal, GateLabel::Normal) => tn += 1,
            (GateLabel::Complex, GateLabel::Normal) => fp += 1,
            (GateLabel::Normal, GateLabel::Complex) => fn_ += 1,
        }
    }
    let total = samples.len();
    GateEval {
        accuracy: if total == 0 { 0.0 } else { (tp + tn) as f64 / total as f64 },
        tp,
        tn,
        fp,
        fn_,
    }
}

pub const GATE_REPORT_HEADER: &str = "kind,train_M,accuracy,TP,TN,FP,FN,model_bytes";

pub fn gate_report_row(gate: &GateModel, train_m: usize, eval: &GateEval) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        gate.kind_name(),
        train_m,
        eval.accuracy,
        eval.tp,
        eval.tn,
        eval.fp,
        eval.fn_,
        gate_to_bytes(gate).len()
    )
}

/// `D_c` together with `M = |D_c|` normal samples chosen by
/// [`qbc_select`] from the normal set.
pub fn balanced_training_set<R: rand::Rng>(
    labeling: &Labeling,
    committee: &CommitteeSpec,
    r: f64,
    rng: &mut R,
) -> Result<Vec<GateSample>> {
    let m = labeling.complex.len();
    let chosen = qbc_select(&labeling.normal, m, committee, r, &labeling.complex, rng)?;
    let mut out = labeling.complex.clone();
    out.extend(chosen);
    Ok(out)
}
