use crate::error::{Error, Result};

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const BCE_EPS: f64 = 1e-7;

/// Mean binary cross-entropy.
pub fn bce_loss(probs: &[f64], labels: &[u8]) -> Result<f64> {
    if probs.is_empty() || probs.len() != labels.len() {
        return Err(Error::input(format!(
            "bce needs equal non-empty inputs, got {} probabilities and {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (&p, &y) in probs.iter().zip(labels) {
        if !p.is_finite() {
            return Err(Error::Numerical(format!("probability {p} is not finite")));
        }
        if y > 1 {
            return Err(Error::input(format!("label {y} is not binary")));
        }
        let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        total -= if y == 1 { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(total / probs.len() as f64)
}

/// d(per-sample BCE)/d(logit). Zero where the clamp is active.
pub fn bce_grad_logit(p: f64, y: u8) -> f64 {
    if !(BCE_EPS..=1.0 - BCE_EPS).contains(&p) {
        return 0.0;
    }
    p - y as f64
}
