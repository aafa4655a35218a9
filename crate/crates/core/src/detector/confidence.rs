//! Per-backend confidence definitions.

use crate::error::{Error, Result};

/// Smallest and largest values `gd_confidence` returns, so the result stays
/// strictly inside (0, 1) even where the logistic saturates in f64.
const OPEN_UNIT_MIN: f64 = f64::MIN_POSITIVE;
const OPEN_UNIT_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

/// Logistic function, evaluated without overflow for large |x|.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Grounding-transformer confidence for one query: the highest sigmoid
/// probability over its per-token grounding logits.
pub fn gd_confidence(token_logits: &[f64]) -> Result<f64> {
    if token_logits.is_empty() {
        return Err(Error::Confidence("no token logits".into()));
    }
    if let Some(bad) = token_logits.iter().find(|l| !l.is_finite()) {
        return Err(Error::Confidence(format!("non-finite logit {bad}")));
    }
    // sigmoid is monotone, so the max over probabilities is the sigmoid of the max logit
    let max_logit = token_logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(sigmoid(max_logit).clamp(OPEN_UNIT_MIN, OPEN_UNIT_MAX))
}

/// Real-time embedding detector confidence: objectness × class probability.
pub fn yoloe_confidence(objectness: f64, class_prob: f64) -> Result<f64> {
    for (name, v) in [("objectness", objectness), ("class probability", class_prob)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Confidence(format!("{name} {v} outside [0, 1]")));
        }
    }
    Ok(objectness * class_prob)
}
