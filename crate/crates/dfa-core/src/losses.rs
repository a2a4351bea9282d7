//! Scalar loss functions shared by the autodiff ops and the evaluation code.
//!
//! Keeping these as plain slice functions lets tests pin their numerics
//! independently of the graph machinery that differentiates them.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("length mismatch: pred {pred}, target {target}, mask {mask}")]
    LengthMismatch {
        pred: usize,
        target: usize,
        mask: usize,
    },
    #[error("logits length {logits} is not a multiple of {classes} classes")]
    LogitsShape { logits: usize, classes: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelRange { label: u8, classes: usize },
}

/// Masked mean-of-squares: `sum_i mask_i (pred_i - target_i)^2 / max(1, sum_i mask_i)`.
///
/// The `max(1, ..)` denominator keeps a fully masked sample (all landmarks
/// truncated) at exactly zero loss instead of 0/0.
pub fn euclidean_loss(pred: &[f64], target: &[f64], mask: &[f64]) -> Result<f64, LossError> {
    if pred.len() != target.len() || pred.len() != mask.len() {
        return Err(LossError::LengthMismatch {
            pred: pred.len(),
            target: target.len(),
            mask: mask.len(),
        });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..pred.len() {
        let d = pred[i] - target[i];
        num += mask[i] * d * d;
        den += mask[i];
    }
    Ok(num / den.max(1.0))
}

/// Mean negative log-likelihood of row-wise softmax over `classes` logits.
///
/// `logits` holds `labels.len()` consecutive rows; row `i` is scored against
/// `labels[i]`. Uses the max-shift trick so large logits stay finite.
pub fn multinomial_logistic_loss(
    logits: &[f64],
    classes: usize,
    labels: &[u8],
) -> Result<f64, LossError> {
    if logits.len() != classes * labels.len() {
        return Err(LossError::LogitsShape {
            logits: logits.len(),
            classes,
        });
    }
    let mut total = 0.0;
    for (row, &label) in labels.iter().enumerate() {
        if label as usize >= classes {
            return Err(LossError::LabelRange { label, classes });
        }
        let r = &logits[row * classes..(row + 1) * classes];
        let max = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_z = r.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
        total += log_z - r[label as usize];
    }
    Ok(total / labels.len() as f64)
}
