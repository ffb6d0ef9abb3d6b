//! Closed-form loss values, independent of the tape.

use super::{ModelError, Result};
use crate::tensor::Tensor;

/// Binary cross-entropy of one target/probability pair.
pub fn bce(target: f64, prob: f64) -> f64 {
    // t=0 or t=1 must not multiply a log(0) into NaN
    let mut v = 0.0;
    if target != 0.0 {
        v -= target * prob.ln();
    }
    if target != 1.0 {
        v -= (1.0 - target) * (1.0 - prob).ln();
    }
    v
}

/// `λ_AE` times the mean binary cross-entropy over every edge and dimension.
pub fn loss_ae(targets: &Tensor, probs: &Tensor, lambda_ae: f64) -> Result<f64> {
    if targets.shape() != probs.shape() {
        return Err(ModelError::Input(format!(
            "reconstruction shape {:?} differs from input {:?}",
            probs.shape(),
            targets.shape()
        )));
    }
    if targets.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = targets
        .data()
        .iter()
        .zip(probs.data())
        .map(|(&t, &p)| bce(t, p))
        .sum();
    Ok(lambda_ae * total / targets.len() as f64)
}

/// `-λ_NM Σ ln σ(hᵢᵀhⱼ)` over the directed edge list.
pub fn loss_nm(embeddings: &Tensor, receivers: &[usize], senders: &[usize], lambda_nm: f64) -> f64 {
    let total: f64 = receivers
        .iter()
        .zip(senders)
        .map(|(&i, &j)| {
            let dot: f64 = embeddings
                .row(i)
                .iter()
                .zip(embeddings.row(j))
                .map(|(a, b)| a * b)
                .sum();
            // ln σ(x) = -ln(1 + e^{-x})
            -(-dot).exp().ln_1p()
        })
        .sum();
    -lambda_nm * total
}

pub fn total_loss(loss_ae: f64, loss_nm: f64) -> f64 {
    loss_ae + loss_nm
}
