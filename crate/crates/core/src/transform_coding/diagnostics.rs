//! Quantization diagnostics: controlled perturbation of quantized codes and
//! the worst-case effect of quantization noise on a linear decoder.

use crate::error::{Error, Result};

/// `code + fraction * (latent - code)` wherever the quantization gap
/// `|latent - code|` is at least `gap_threshold`; `code` elsewhere.
pub fn perturb_quantized(latent: &[f32], code: &[f32], gap_threshold: f32, fraction: f32) -> Result<Vec<f32>> {
    if latent.len() != code.len() {
        return Err(Error::ShapeMismatch(format!(
            "latent has {} elements, code has {}",
            latent.len(),
            code.len()
        )));
    }
    Ok(latent
        .iter()
        .zip(code)
        .map(|(&a, &q)| {
            let gap = a - q;
            if gap.abs() >= gap_threshold {
                q + fraction * gap
            } else {
                q
            }
        })
        .collect())
}

/// `max_{|eta|_inf <= 1/2} |w . eta| = |w|_1 / 2`.
pub fn linear_noise_bound(weights: &[f32]) -> f64 {
    0.5 * weights.iter().map(|w| w.abs() as f64).sum::<f64>()
}
