use crate::error::{Error, Result};
use crate::numkit::Matrix;

/// Probabilities below this are clamped before taking the log, so a
/// confidently wrong prediction yields a large finite loss instead of `inf`.
pub const PROB_CLAMP: f64 = 1e-12;

/// Numerically stable softmax of one row of logits.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Row-wise softmax of a logits matrix.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut probs = logits.clone();
    for r in 0..probs.rows() {
        softmax_in_place(probs.row_mut(r));
    }
    probs
}

/// Per-sample and mean cross-entropy between probability rows and one-hot
/// targets. Probabilities are clamped at [`PROB_CLAMP`] before the log.
pub fn cross_entropy(probs: &Matrix, targets: &Matrix) -> Result<(Vec<f64>, f64)> {
    if probs.shape() != targets.shape() {
        return Err(Error::dimension(
            "cross_entropy",
            format!("{:?}", probs.shape()),
            format!("{:?}", targets.shape()),
        ));
    }
    let per_sample: Vec<f64> = (0..probs.rows())
        .map(|n| {
            -probs
                .row(n)
                .iter()
                .zip(targets.row(n))
                .filter(|(_, &t)| t != 0.0)
                .map(|(&p, &t)| t * p.max(PROB_CLAMP).ln())
                .sum::<f64>()
        })
        .collect();
    let mean = if per_sample.is_empty() {
        0.0
    } else {
        per_sample.iter().sum::<f64>() / per_sample.len() as f64
    };
    Ok((per_sample, mean))
}

/// One-hot encodes class labels.
pub fn one_hot(labels: &[usize], num_classes: usize) -> Result<Matrix> {
    let mut m = Matrix::zeros(labels.len(), num_classes);
    for (r, &label) in labels.iter().enumerate() {
        if label >= num_classes {
            return Err(Error::validation(format!(
                "label {label} out of range for {num_classes} classes"
            )));
        }
        m.set(r, label, 1.0);
    }
    Ok(m)
}
