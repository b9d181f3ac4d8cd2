//! Central finite-difference verification of analytic gradients.

use std::fmt;

use crate::params::{Gradients, ParamStore};

/// Scalar objective over a parameter store.
pub trait Objective {
    fn value(&self, params: &ParamStore) -> f64;
    fn value_and_grad(&self, params: &ParamStore) -> (f64, Gradients);
}

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub step: f64,
    /// Maximum allowed relative error.
    pub tolerance: f64,
    /// Denominator floor: `|a - n| / max(|a|, |n|, floor)`.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-4,
            tolerance: 1e-4,
            floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamReport {
    pub name: String,
    pub numel: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_index: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamReport>,
    pub tolerance: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() <= self.tolerance
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamReport> {
        self.params.iter().filter(|p| p.max_rel_error > self.tolerance)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "gradcheck: {} entries over {} tensors, max rel error {:.3e} (tol {:.1e}) {}",
            self.checked,
            self.params.len(),
            self.max_rel_error(),
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        )?;
        for p in &self.params {
            writeln!(
                f,
                "  {:<48} n={:<6} rel={:.3e} abs={:.3e}",
                p.name, p.numel, p.max_rel_error, p.max_abs_error
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GradCheckError {
    #[error("non-finite analytic gradient for `{0}`")]
    NonFiniteAnalytic(String),
    #[error("non-finite objective while perturbing `{0}`")]
    NonFiniteNumeric(String),
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Checks every entry of every parameter (or only those whose name passes
/// `filter`). Values are restored bit-exactly after each perturbation.
pub fn grad_check_filtered(
    store: &mut ParamStore,
    objective: &impl Objective,
    cfg: &GradCheckConfig,
    filter: impl Fn(&str) -> bool,
) -> Result<GradCheckReport, GradCheckError> {
    let (_, analytic) = objective.value_and_grad(store);
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    let mut reports = Vec::new();
    let mut checked = 0;
    for id in ids {
        let name = store.get(id).name.clone();
        if !filter(&name) {
            continue;
        }
        let n = store.get(id).value.len();
        let zeros = vec![0.0; n];
        let a = analytic.get(id).unwrap_or(&zeros).to_vec();
        if a.iter().any(|v| !v.is_finite()) {
            return Err(GradCheckError::NonFiniteAnalytic(name));
        }
        let mut rep = ParamReport {
            name: name.clone(),
            numel: n,
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            worst_index: 0,
        };
        for j in 0..n {
            let orig = store.get(id).value.data()[j];
            store.get_mut(id).value.data_mut()[j] = orig + cfg.step;
            let fp = objective.value(store);
            store.get_mut(id).value.data_mut()[j] = orig - cfg.step;
            let fm = objective.value(store);
            store.get_mut(id).value.data_mut()[j] = orig;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(GradCheckError::NonFiniteNumeric(name));
            }
            let numeric = (fp - fm) / (2.0 * cfg.step);
            let rel = relative_error(a[j], numeric, cfg.floor);
            let abs = (a[j] - numeric).abs();
            if rel > rep.max_rel_error {
                rep.max_rel_error = rel;
                rep.worst_index = j;
            }
            rep.max_abs_error = rep.max_abs_error.max(abs);
            checked += 1;
        }
        reports.push(rep);
    }
    Ok(GradCheckReport {
        params: reports,
        tolerance: cfg.tolerance,
        checked,
    })
}

pub fn grad_check(
    store: &mut ParamStore,
    objective: &impl Objective,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport, GradCheckError> {
    grad_check_filtered(store, objective, cfg, |_| true)
}
