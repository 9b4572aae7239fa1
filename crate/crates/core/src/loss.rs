//! Training objectives and their gradients with respect to student logits.
//!
//! Every loss averages over the batch (`1/B`), so gradient magnitudes do
//! not depend on batch size. The mimic objectives compare a student batch
//! with a target batch of the same shape.

use crate::error::{Error, Result};
use crate::nn::{log_softmax, softmax_rows};
use crate::numerics::Matrix;

/// Which objective a training run minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Softmax cross-entropy on hard class labels.
    CrossEntropyHard,
    /// `1/(2B) * sum ||student - target||^2` on logits.
    L2Logit,
    /// `KL(p_teacher || p_student)` on softmax probabilities.
    KlMimic,
    /// `1/(2B) * sum ||p_student - p_teacher||^2` on probabilities.
    L2Prob,
}

impl LossKind {
    pub fn needs_soft_targets(self) -> bool {
        !matches!(self, LossKind::CrossEntropyHard)
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::CrossEntropyHard => "xent",
            LossKind::L2Logit => "l2_logit",
            LossKind::KlMimic => "kl",
            LossKind::L2Prob => "l2_prob",
        }
    }

    pub fn parse(s: &str) -> Result<LossKind> {
        match s {
            "xent" | "cross_entropy" => Ok(LossKind::CrossEntropyHard),
            "l2_logit" | "l2" => Ok(LossKind::L2Logit),
            "kl" | "kl_mimic" => Ok(LossKind::KlMimic),
            "l2_prob" => Ok(LossKind::L2Prob),
            other => Err(Error::Config(format!(
                "unknown loss {other:?} (expected xent, l2_logit, kl or l2_prob)"
            ))),
        }
    }

    /// Loss and gradient of a soft-target objective.
    pub fn soft(self, student: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
        match self {
            LossKind::L2Logit => l2_logit(student, target),
            LossKind::KlMimic => kl_mimic(student, target),
            LossKind::L2Prob => l2_prob(student, target),
            LossKind::CrossEntropyHard => Err(Error::Contract(
                "cross-entropy needs hard labels, not soft targets".into(),
            )),
        }
    }
}

fn check_same_shape(a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "prediction is {}x{} but target is {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    if a.rows() == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    Ok(())
}

/// Softmax cross-entropy against class indices.
pub fn xent_softmax(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (batch, classes) = logits.shape();
    if labels.len() != batch || batch == 0 {
        return Err(Error::Shape(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Domain(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let inv_b = 1.0 / batch as f64;
    let mut loss = 0.0;
    let mut grad = softmax_rows(logits);
    for (r, &label) in labels.iter().enumerate() {
        loss -= log_softmax(logits.row(r))[label];
        let g = grad.row_mut(r);
        g[label] -= 1.0;
        g.iter_mut().for_each(|v| *v *= inv_b);
    }
    Ok((loss * inv_b, grad))
}

/// L2 regression on logits: `1/(2B) * sum_t ||pred_t - target_t||^2`.
pub fn l2_logit(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    check_same_shape(pred, target)?;
    let inv_b = 1.0 / pred.rows() as f64;
    let mut sq = 0.0;
    let grad: Vec<f64> = pred
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(p, t)| {
            let d = p - t;
            sq += d * d;
            d * inv_b
        })
        .collect();
    Ok((
        0.5 * sq * inv_b,
        Matrix::from_vec_unchecked(pred.rows(), pred.cols(), grad),
    ))
}

/// `KL(softmax(teacher) || softmax(student))`, batch-averaged.
pub fn kl_mimic(student_logits: &Matrix, teacher_logits: &Matrix) -> Result<(f64, Matrix)> {
    check_same_shape(student_logits, teacher_logits)?;
    let inv_b = 1.0 / student_logits.rows() as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(student_logits.rows(), student_logits.cols());
    for r in 0..student_logits.rows() {
        let log_ps = log_softmax(student_logits.row(r));
        let log_pt = log_softmax(teacher_logits.row(r));
        let g = grad.row_mut(r);
        for k in 0..log_ps.len() {
            let pt = log_pt[k].exp();
            if pt > 0.0 {
                loss += pt * (log_pt[k] - log_ps[k]);
            }
            g[k] = (log_ps[k].exp() - pt) * inv_b;
        }
    }
    Ok((loss * inv_b, grad))
}

/// Squared error between student and teacher probabilities.
pub fn l2_prob(student_logits: &Matrix, teacher_logits: &Matrix) -> Result<(f64, Matrix)> {
    check_same_shape(student_logits, teacher_logits)?;
    let inv_b = 1.0 / student_logits.rows() as f64;
    let ps = softmax_rows(student_logits);
    let pt = softmax_rows(teacher_logits);
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(ps.rows(), ps.cols());
    for r in 0..ps.rows() {
        let (p, q) = (ps.row(r), pt.row(r));
        let resid: Vec<f64> = p.iter().zip(q).map(|(a, b)| a - b).collect();
        loss += resid.iter().map(|d| d * d).sum::<f64>();
        // d/dz_j = p_j * (r_j - sum_k r_k p_k)
        let dot: f64 = resid.iter().zip(p).map(|(d, pk)| d * pk).sum();
        for (g, (pj, dj)) in grad.row_mut(r).iter_mut().zip(p.iter().zip(&resid)) {
            *g = pj * (dj - dot) * inv_b;
        }
    }
    Ok((0.5 * loss * inv_b, grad))
}
