//! Next-token distributions and the nucleus filter.

use super::features::FeatureVector;
use super::params::PolicyParams;
use crate::error::{Error, Result};

/// Softmax of `logits / temperature`, max-shifted.
pub fn softmax(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::invalid("temperature must be positive"));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits
        .iter()
        .map(|z| ((z - max) / temperature).exp())
        .collect();
    let total: f64 = p.iter().sum();
    for x in &mut p {
        *x /= total;
    }
    Ok(p)
}

/// Log-softmax at temperature 1.
pub fn log_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    Ok(logits.iter().map(|z| z - lse).collect())
}

/// p(· | φ) at the given temperature.
pub fn next_token_dist(
    params: &PolicyParams,
    features: &FeatureVector,
    temperature: f64,
) -> Result<Vec<f64>> {
    softmax(&params.logits(features), temperature)
}

/// Keeps the shortest descending-probability prefix with mass ≥ `top_p`
/// (ties by lower id), zeroes the rest and renormalizes.
pub fn nucleus_filter(dist: &[f64], top_p: f64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
    let mut out = vec![0.0; dist.len()];
    let mut mass = 0.0;
    for &i in &order {
        out[i] = dist[i];
        mass += dist[i];
        if mass >= top_p {
            break;
        }
    }
    for x in &mut out {
        *x /= mass;
    }
    out
}
