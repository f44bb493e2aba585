use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gate::{train_gate, GateHyper, GateKind, GateModel, GateSample};

/// Natural-log entropy of a probability vector, `0 ln 0 = 0`.
pub fn entropy(probs: &[f64]) -> Result<f64> {
    let sum: f64 = probs.iter().sum();
    if probs.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
        return Err(Error::input(format!("not a probability vector (sum {sum})")));
    }
    Ok(probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum::<f64>()
        .max(0.0))
}

/// Entropy of one member's class distribution at `x`.
pub fn committee_entropy(member: &GateModel, x: &[f64]) -> Result<f64> {
    entropy(&member.proba(x))
}

/// Members and how to train them.
#[derive(Clone, Debug, PartialEq)]
pub struct CommitteeSpec {
    pub members: Vec<(GateKind, GateHyper)>,
    /// Member `i` is trained with `seed + i`.
    pub seed: u64,
}

impl Default for CommitteeSpec {
    fn default() -> Self {
        let base = GateHyper::default();
        CommitteeSpec {
            members: vec![
                (GateKind::LinearSvm, base),
                (GateKind::Knn, GateHyper { knn_k: 5, ..base }),
                (
                    GateKind::RandomForest,
                    GateHyper {
                        rf_trees: 5,
                        rf_depth: 4,
                        ..base
                    },
                ),
            ],
            seed: 0,
        }
    }
}

impl CommitteeSpec {
    pub fn train(&self, samples: &[GateSample]) -> Result<Committee> {
        if self.members.len() < 2 {
            return Err(Error::input("a committee needs at least two members"));
        }
        let members = self
            .members
            .iter()
            .enumerate()
            .map(|(i, (kind, hyper))| train_gate(samples, *kind, hyper, self.seed.wrapping_add(i as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Committee { members })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Committee {
    pub members: Vec<GateModel>,
}

/// Largest member entropy at `x`.
pub fn qbc_score(committee: &Committee, x: &[f64]) -> Result<f64> {
    if committee.members.is_empty() {
        return Err(Error::State("committee has no trained members".into()));
    }
    let mut best = 0.0f64;
    for m in &committee.members {
        best = best.max(committee_entropy(m, x)?);
    }
    Ok(best)
}

/// Size of the random seed draw: `floor(r M)`, at least 1 when `M >= 1`.
pub fn random_count(r: f64, m: usize) -> usize {
    if m == 0 {
        0
    } else {
        ((r * m as f64).floor() as usize).clamp(1, m)
    }
}

/// Choose `m` normal samples: a random `random_count(r, m)` first, then
/// the most uncertain of the rest under a committee trained on the
/// complex set plus the random draw. Ties in score go to the lower
/// `source_index`.
pub fn qbc_select<R: Rng>(
    normal: &[GateSample],
    m: usize,
    committee: &CommitteeSpec,
    r: f64,
    complex: &[GateSample],
    rng: &mut R,
) -> Result<Vec<GateSample>> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::input(format!("r must be in (0, 1), got {r}")));
    }
    if normal.len() < m {
        return Err(Error::input(format!("need {m} normal samples, have {}", normal.len())));
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    let n_rand = random_count(r, m);
    let drawn = index::sample(rng, normal.len(), n_rand).into_vec();
    let mut taken = vec![false; normal.len()];
    let mut selected: Vec<GateSample> = drawn
        .iter()
        .map(|&i| {
            taken[i] = true;
            normal[i].clone()
        })
        .collect();
    if n_rand == m {
        return Ok(selected);
    }

    let mut train: Vec<GateSample> = complex.to_vec();
    train.extend(selected.iter().cloned());
    let trained = committee.train(&train)?;

    let rest: Vec<&GateSample> = normal.iter().zip(&taken).filter(|(_, t)| !**t).map(|(s, _)| s).collect();
    let mut scored = rest
        .par_iter()
        .map(|s| qbc_score(&trained, &s.features).map(|score| (score, s.source_index, *s)))
        .collect::<Result<Vec<_>>>()?;
    let need = m - n_rand;
    let cmp = |a: &(f64, usize, &GateSample), b: &(f64, usize, &GateSample)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if need < scored.len() {
        scored.select_nth_unstable_by(need - 1, cmp);
        scored.truncate(need);
    }
    scored.sort_by(cmp);
    selected.extend(scored.into_iter().map(|(_, _, s)| s.clone()));
    Ok(selected)
}
