//! Loss functions and their gradients. All reductions run in `f64`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub(crate) fn softmax_row(z: &[f32], temperature: f64) -> Vec<f64> {
    let max = z.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
    let exps: Vec<f64> = z.iter().map(|&v| ((v as f64 - max) / temperature).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Mean softmax cross-entropy and its gradient w.r.t. the logits.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Vec<f32>)> {
    let n = logits.rows();
    let k = logits.row_len();
    if labels.len() != n {
        return Err(Error::shape(format!("{} labels for {n} rows", labels.len())));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0f32; n * k];
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::input(format!("label {y} out of range for {k} classes")));
        }
        let p = softmax_row(logits.row(i), 1.0);
        loss -= p[y].max(f64::MIN_POSITIVE).ln();
        for c in 0..k {
            let target = if c == y { 1.0 } else { 0.0 };
            grad[i * k + c] = ((p[c] - target) / n as f64) as f32;
        }
    }
    Ok((loss / n as f64, grad))
}

/// `T^2 * KL(softmax(teacher/T) || softmax(student/T))`, batch mean, with the
/// gradient w.r.t. the student logits.
pub fn logit_kl(student: &Tensor, teacher: &Tensor, temperature: f64) -> Result<(f64, Vec<f32>)> {
    if student.dims() != teacher.dims() {
        return Err(Error::shape(format!(
            "student logits {:?} vs teacher logits {:?}",
            student.dims(),
            teacher.dims()
        )));
    }
    let n = student.rows();
    let k = student.row_len();
    let t = temperature;
    let mut loss = 0.0;
    let mut grad = vec![0.0f32; n * k];
    for i in 0..n {
        let ps = softmax_row(student.row(i), t);
        let pt = softmax_row(teacher.row(i), t);
        for c in 0..k {
            if pt[c] > 0.0 {
                loss += pt[c] * (pt[c].ln() - ps[c].max(f64::MIN_POSITIVE).ln());
            }
            grad[i * k + c] = (t * (ps[c] - pt[c]) / n as f64) as f32;
        }
    }
    Ok((t * t * loss / n as f64, grad))
}

/// `A A^T` with each row scaled to unit L2 norm. A zero row stays zero.
fn normalized_gram(feats: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let b = feats.rows();
    let mut g = vec![0.0f64; b * b];
    for i in 0..b {
        for j in i..b {
            let dot: f64 = feats
                .row(i)
                .iter()
                .zip(feats.row(j))
                .map(|(&x, &y)| x as f64 * y as f64)
                .sum();
            g[i * b + j] = dot;
            g[j * b + i] = dot;
        }
    }
    let norms: Vec<f64> = (0..b)
        .map(|i| g[i * b..(i + 1) * b].iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut gn = g.clone();
    for i in 0..b {
        for j in 0..b {
            gn[i * b + j] = if norms[i] > 0.0 { g[i * b + j] / norms[i] } else { 0.0 };
        }
    }
    (gn, norms)
}

fn check_feature_batches(student: &Tensor, teacher: &Tensor) -> Result<usize> {
    let b = student.rows();
    if teacher.rows() != b {
        return Err(Error::shape(format!(
            "feature batches differ: {} vs {}",
            b,
            teacher.rows()
        )));
    }
    Ok(b)
}

/// Similarity-preserving distillation loss over a batch of `b` feature
/// rows: `(1/b^2) * ||G_s - G_t||_F^2` where `G = row_normalize(A A^T)`.
/// Feature widths of the two tensors may differ.
pub fn sp_kd_loss(teacher_feats: &Tensor, student_feats: &Tensor) -> Result<f64> {
    let b = check_feature_batches(student_feats, teacher_feats)?;
    let (gs, _) = normalized_gram(student_feats);
    let (gt, _) = normalized_gram(teacher_feats);
    let sq: f64 = gs.iter().zip(&gt).map(|(s, t)| (s - t) * (s - t)).sum();
    Ok(sq / (b * b) as f64)
}

/// `sp_kd_loss` together with its gradient w.r.t. the student features.
pub fn sp_kd_loss_grad(teacher_feats: &Tensor, student_feats: &Tensor) -> Result<(f64, Vec<f32>)> {
    let b = check_feature_batches(student_feats, teacher_feats)?;
    let width = student_feats.row_len();
    let (gs, norms) = normalized_gram(student_feats);
    let (gt, _) = normalized_gram(teacher_feats);
    let scale = 1.0 / (b * b) as f64;
    let diff: Vec<f64> = gs.iter().zip(&gt).map(|(s, t)| s - t).collect();
    let loss = diff.iter().map(|d| d * d).sum::<f64>() * scale;

    // dL/dGhat = 2 scale diff; back through the row normalization.
    let mut dg = vec![0.0f64; b * b];
    for i in 0..b {
        if norms[i] == 0.0 {
            continue;
        }
        let row = i * b..(i + 1) * b;
        let d_hat: Vec<f64> = diff[row.clone()].iter().map(|d| 2.0 * scale * d).collect();
        let proj: f64 = d_hat.iter().zip(&gs[row.clone()]).map(|(a, c)| a * c).sum();
        for j in 0..b {
            dg[i * b + j] = (d_hat[j] - proj * gs[i * b + j]) / norms[i];
        }
    }
    // G = A A^T  =>  dA = (dG + dG^T) A
    let mut grad = vec![0.0f32; b * width];
    for i in 0..b {
        for c in 0..width {
            let mut acc = 0.0f64;
            for j in 0..b {
                acc += (dg[i * b + j] + dg[j * b + i]) * student_feats.row(j)[c] as f64;
            }
            grad[i * width + c] = acc as f32;
        }
    }
    Ok((loss, grad))
}
