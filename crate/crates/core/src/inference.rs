//! Dynamic-threshold multi-label decisions.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::numerics::{argmax, max, mean, min, population_std};

/// Coefficients of the dynamic threshold
/// `alpha*mean + beta*std + gamma*max + (1-gamma)*min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for ThresholdParams {
    fn default() -> Self {
        ThresholdParams {
            alpha: 0.3,
            beta: 0.7,
            gamma: 0.7,
        }
    }
}

impl ThresholdParams {
    pub fn is_finite(&self) -> bool {
        self.alpha.is_finite() && self.beta.is_finite() && self.gamma.is_finite()
    }
}

/// What to do when no score clears the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fallback {
    /// Predict nothing.
    None,
    /// Predict the single best-scoring class.
    #[default]
    Argmax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub positives: BTreeSet<usize>,
    pub threshold: f64,
    pub fallback_used: bool,
}

/// Per-query threshold from the statistics of its score vector. Returns NaN
/// for an empty vector.
pub fn dynamic_threshold(y_hat: &[f64], params: &ThresholdParams) -> f64 {
    if y_hat.is_empty() {
        return f64::NAN;
    }
    params.alpha * mean(y_hat)
        + params.beta * population_std(y_hat)
        + params.gamma * max(y_hat)
        + (1.0 - params.gamma) * min(y_hat)
}

/// Classes whose score is strictly above the dynamic threshold.
pub fn predict(y_hat: &[f64], params: &ThresholdParams, fallback: Fallback) -> Prediction {
    let threshold = dynamic_threshold(y_hat, params);
    let mut positives: BTreeSet<usize> = y_hat
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > threshold)
        .map(|(i, _)| i)
        .collect();
    let mut fallback_used = false;
    if positives.is_empty() && fallback == Fallback::Argmax {
        if let Some(best) = argmax(y_hat) {
            positives.insert(best);
            fallback_used = true;
        }
    }
    Prediction {
        positives,
        threshold,
        fallback_used,
    }
}
