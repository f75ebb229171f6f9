//! Softmax cross-entropy.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Mean of `-log softmax(logits)[label]` over the batch together with its
/// cotangent `(softmax - onehot) / B`. `logits` is `B x C` row-major.
pub fn cross_entropy<F: Scalar>(logits: &[F], labels: &[u32], classes: usize) -> Result<(F, Vec<F>)> {
    let batch = labels.len();
    if classes == 0 || logits.len() != batch * classes {
        return Err(Error::Shape(format!(
            "{} logits for {batch} labels and {classes} classes",
            logits.len()
        )));
    }
    if batch == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    if let Some(bad) = labels.iter().find(|&&l| l as usize >= classes) {
        return Err(Error::Input(format!("label {bad} out of range for {classes} classes")));
    }
    let scale = F::one() / F::of(batch as f64);
    let mut total = 0.0f64;
    let mut grad = vec![F::zero(); logits.len()];
    for ((row, g), &label) in logits
        .chunks_exact(classes)
        .zip(grad.chunks_exact_mut(classes))
        .zip(labels)
    {
        let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
        let mut sum = F::zero();
        for (gi, &v) in g.iter_mut().zip(row) {
            *gi = (v - max).exp();
            sum += *gi;
        }
        let log_z = max + sum.ln();
        total += (log_z - row[label as usize]).as_f64();
        for gi in g.iter_mut() {
            *gi = *gi / sum * scale;
        }
        g[label as usize] -= scale;
    }
    Ok((F::of(total / batch as f64), grad))
}
