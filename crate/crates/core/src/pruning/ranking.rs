//! Ranking metrics that mix a screening score with a magnitude.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weight of the screening score against the magnitude term; `0 < alpha <= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankingConfig {
    pub alpha: f64,
}

impl Default for RankingConfig {
    fn default() -> Self {
        RankingConfig { alpha: 0.4 }
    }
}

impl RankingConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.alpha > 0.0 && self.alpha <= 1.0 {
            Ok(())
        } else {
            Err(format!("ranking.alpha must lie in (0, 1], got {}", self.alpha))
        }
    }
}

/// Min-max normalization into `[0, 1]`. A constant vector maps to all `0.5`.
pub fn normalize_scores(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::invalid("cannot normalize an empty score vector"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("scores must be finite"));
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi == lo {
        return Ok(vec![0.5; values.len()]);
    }
    let span = hi - lo;
    Ok(values.iter().map(|v| (v - lo) / span).collect())
}

fn mix(scores: &[f64], magnitudes: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    if scores.len() != magnitudes.len() {
        return Err(Error::shape(format!(
            "{} scores but {} magnitudes",
            scores.len(),
            magnitudes.len()
        )));
    }
    if magnitudes.iter().any(|&m| m < 0.0) {
        return Err(Error::invalid("magnitudes must be non-negative"));
    }
    let s = normalize_scores(scores)?;
    let m = normalize_scores(magnitudes)?;
    Ok(s.iter().zip(&m).map(|(s, m)| alpha * s + (1.0 - alpha) * m).collect())
}

/// `alpha * norm(F) + (1 - alpha) * norm(|w|)` for individual weights.
pub fn ranking_metric_weights(f_scores: &[f64], magnitudes: &[f64], alpha: f64) -> Result<Vec<f64>> {
    mix(f_scores, magnitudes, alpha)
}

/// `alpha * norm(F) + (1 - alpha) * norm(|gamma|)` for batch-norm channels.
pub fn ranking_metric_channels(f_scores: &[f64], gamma_abs: &[f64], alpha: f64) -> Result<Vec<f64>> {
    mix(f_scores, gamma_abs, alpha)
}
