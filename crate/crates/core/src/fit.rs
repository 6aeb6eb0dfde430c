//! Fit results shared by both models.

use serde::{Deserialize, Serialize};

/// One accepted iteration of an optimiser.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub loglik: f64,
    pub max_gradient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub estimates: Vec<f64>,
    /// Absent when the information matrix at the optimum is singular or not
    /// positive definite.
    pub std_errors: Option<Vec<f64>>,
    pub loglik: f64,
    pub aic: f64,
    pub n_iterations: usize,
    pub converged: bool,
    pub n_obs: usize,
    /// Number of estimated parameters; fixed ones are excluded.
    pub n_free: usize,
    pub trace: Vec<TraceRecord>,
}

impl FitResult {
    pub(crate) fn new(
        names: Vec<String>,
        estimates: Vec<f64>,
        std_errors: Option<Vec<f64>>,
        loglik: f64,
        n_free: usize,
        n_iterations: usize,
        converged: bool,
        n_obs: usize,
        trace: Vec<TraceRecord>,
    ) -> Self {
        FitResult {
            names,
            estimates,
            std_errors,
            loglik,
            aic: aic(loglik, n_free),
            n_iterations,
            converged,
            n_obs,
            n_free,
            trace,
        }
    }

    pub fn estimate(&self, name: &str) -> Option<f64> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(self.estimates[i])
    }

    pub fn std_error(&self, name: &str) -> Option<f64> {
        let i = self.names.iter().position(|n| n == name)?;
        self.std_errors.as_ref().map(|s| s[i])
    }
}

pub fn aic(loglik: f64, n_free: usize) -> f64 {
    -2.0 * loglik + 2.0 * n_free as f64
}
