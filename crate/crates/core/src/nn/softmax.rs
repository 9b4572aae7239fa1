use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// `p_k = exp(z_k - max z) / sum_j exp(z_j - max z)`.
pub fn softmax(z: &[f64]) -> Result<Vec<f64>> {
    if z.is_empty() {
        return Err(Error::Domain("softmax of an empty vector".into()));
    }
    if let Some(bad) = z.iter().find(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("softmax input {bad} is not finite")));
    }
    let mut p = z.to_vec();
    softmax_in_place(&mut p);
    Ok(p)
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
}

/// `log p_k = (z_k - max z) - ln sum_j exp(z_j - max z)`.
pub(crate) fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - max - lse).collect()
}

/// Row-wise softmax of a logit batch.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut p = logits.clone();
    let cols = p.cols();
    if cols > 0 {
        p.as_mut_slice()
            .chunks_exact_mut(cols)
            .for_each(softmax_in_place);
    }
    p
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
