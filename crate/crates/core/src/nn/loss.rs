use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean softmax cross-entropy over a batch of logits `[k, C]`.
///
/// Returns the loss and its gradient `(softmax - onehot) / k`. Reductions run in `f64`.
pub fn cross_entropy_loss(logits: &Tensor, labels: &[usize]) -> Result<(f32, Tensor)> {
    if logits.shape().len() != 2 {
        return Err(Error::shape(format!("logits must be [k, C], got {:?}", logits.shape())));
    }
    let (k, classes) = (logits.rows(), logits.shape()[1]);
    if labels.len() != k {
        return Err(Error::shape(format!("{} labels for a batch of {k}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::invalid(format!("label {bad} out of range for {classes} classes")));
    }
    if k == 0 {
        return Ok((0.0, Tensor::zeros(logits.shape())));
    }
    let mut grad = Tensor::zeros(logits.shape());
    let mut total = 0.0f64;
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
        let sum: f64 = row.iter().map(|&v| (v as f64 - max).exp()).sum();
        let log_norm = max + sum.ln();
        total += log_norm - row[label] as f64;
        let g = &mut grad.data_mut()[i * classes..(i + 1) * classes];
        for (j, (gv, &v)) in g.iter_mut().zip(row).enumerate() {
            let p = (v as f64 - log_norm).exp();
            let target = if j == label { 1.0 } else { 0.0 };
            *gv = ((p - target) / k as f64) as f32;
        }
    }
    Ok(((total / k as f64) as f32, grad))
}
