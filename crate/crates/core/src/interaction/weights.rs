//! Temporal loss weights and the weighted L1 regression loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::wrap_angle;

use super::intervals::InteractionIntervals;

/// Default decay factor per step.
pub const DEFAULT_K_R: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    /// `w[t - 1]` is the weight of 1-based step `t`.
    pub w: Vec<f64>,
}

impl WeightVector {
    pub fn uniform(horizon: usize) -> Self {
        Self { w: vec![1.0; horizon] }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// Weight of 1-based step `t`.
    pub fn at(&self, t: usize) -> f64 {
        self.w[t - 1]
    }
}

/// `w_t = 1` inside any span, `exp(-k_r t)` elsewhere, `t` 1-based.
pub fn temporal_weights(horizon: usize, k_r: f64, intervals: &InteractionIntervals) -> Result<WeightVector> {
    if !(k_r >= 0.0) || !k_r.is_finite() {
        return Err(Error::Invalid(format!("k_R must be finite and non-negative, got {k_r}")));
    }
    Ok(WeightVector {
        w: (1..=horizon)
            .map(|t| if intervals.contains(t) { 1.0 } else { (-k_r * t as f64).exp() })
            .collect(),
    })
}

/// Per-step state: `[x, y, heading, speed]`.
pub type State4 = [f64; 4];

/// `Σ_t w_t Σ_c |pred - gt| / (4 T)`, heading residual wrapped. Returns the
/// loss and its gradient w.r.t. `pred` (0 at exact equality).
pub fn weighted_l1(pred: &[State4], gt: &[State4], w: &[f64]) -> Result<(f64, Vec<State4>)> {
    if pred.len() != gt.len() || pred.len() != w.len() {
        return Err(Error::Horizon(format!(
            "weighted_l1: pred {} / gt {} / weights {}",
            pred.len(),
            gt.len(),
            w.len()
        )));
    }
    if pred.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let norm = 4.0 * pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![[0.0; 4]; pred.len()];
    for t in 0..pred.len() {
        for c in 0..4 {
            let r = if c == 2 {
                wrap_angle(pred[t][c] - gt[t][c])
            } else {
                pred[t][c] - gt[t][c]
            };
            loss += w[t] * r.abs();
            let sign = if r > 0.0 {
                1.0
            } else if r < 0.0 {
                -1.0
            } else {
                0.0
            };
            grad[t][c] = w[t] * sign / norm;
        }
    }
    Ok((loss / norm, grad))
}
