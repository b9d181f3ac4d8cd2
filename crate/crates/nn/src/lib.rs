//! Minimal deterministic dense-tensor kernel for the planner network.
//!
//! * [`Tensor`]: row-major `f64` storage.
//! * [`Graph`]: eager tape with reverse-mode differentiation.
//! * [`ParamStore`]: named parameters, gradient accumulators and JSON
//!   checkpoints.
//! * [`layers`]: linear, layer norm, multi-head attention blocks, Fourier
//!   position embedding, MLP-Mixer and the state-dropout ego encoder.
//! * [`gradcheck`]: central finite-difference verification.
//!
//! Everything runs in 64-bit floats on one thread per graph. Results are
//! bit-reproducible for a fixed parameter state and input.

pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod params;
pub mod tensor;

pub use error::{NnError, Result};
pub use gradcheck::{grad_check, grad_check_filtered, GradCheckConfig, GradCheckReport, Objective};
pub use graph::{Graph, Var};
pub use params::{write_atomic, Checkpoint, Gradients, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;

/// Numerically stable softmax of one row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// `log Σ exp(l)`.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

/// Cross-entropy of `logits` against class `target`, with its gradient
/// w.r.t. the logits (`softmax - onehot`).
pub fn cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let loss = log_sum_exp(logits) - logits[target];
    let mut grad = softmax(logits);
    grad[target] -= 1.0;
    (loss.max(0.0), grad)
}
