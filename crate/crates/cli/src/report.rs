use std::path::Path;

use anyhow::{bail, Context, Result};
use glgmix::data::ModelSpec;
use glgmix::{FitResult, MnbParams, PglgParams, TraceRecord};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    /// Poisson with a GLG random intercept
    Pglg,
    /// Poisson with a normal random intercept (λ = 0)
    PglgNormal,
    /// Multivariate negative binomial
    Mnb,
    /// Univariate negative binomial: every row its own cluster
    Nb,
}

impl Model {
    pub fn name(self) -> &'static str {
        match self {
            Model::Pglg => "pglg",
            Model::PglgNormal => "pglg-normal",
            Model::Mnb => "mnb",
            Model::Nb => "nb",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub estimate: f64,
    pub se: Option<f64>,
    /// Wald z; not reported for sigma and phi, whose null values lie on the
    /// boundary of the parameter space.
    pub z: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: Model,
    pub spec: ModelSpec,
    pub parameters: Vec<Parameter>,
    pub loglik: f64,
    pub aic: f64,
    pub n_free: usize,
    pub n_obs: usize,
    pub n_clusters: usize,
    pub converged: bool,
    pub iterations: usize,
    /// MNB deviance at the estimates with φ held fixed; MNB and NB only.
    pub deviance: Option<f64>,
    pub trace: Vec<TraceRecord>,
}

impl FitReport {
    pub fn new(model: Model, spec: ModelSpec, n_clusters: usize, fit: &FitResult, deviance: Option<f64>) -> Self {
        let parameters = fit
            .names
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let estimate = fit.estimates[i];
                let se = fit.std_errors.as_ref().map(|s| s[i]);
                let z = match name.as_str() {
                    "sigma" | "phi" => None,
                    _ => se.map(|s| estimate / s),
                };
                Parameter {
                    name: name.clone(),
                    estimate,
                    se,
                    z,
                }
            })
            .collect();
        FitReport {
            model,
            spec,
            parameters,
            loglik: fit.loglik,
            aic: fit.aic,
            n_free: fit.n_free,
            n_obs: fit.n_obs,
            n_clusters,
            converged: fit.converged,
            iterations: fit.n_iterations,
            deviance,
            trace: fit.trace.clone(),
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("{} is not a fit report", path.display()))
    }

    pub fn estimate(&self, name: &str) -> Option<f64> {
        self.parameters.iter().find(|p| p.name == name).map(|p| p.estimate)
    }

    fn beta(&self) -> Vec<f64> {
        self.parameters
            .iter()
            .filter(|p| !matches!(p.name.as_str(), "sigma" | "lambda" | "phi"))
            .map(|p| p.estimate)
            .collect()
    }

    pub fn mnb_params(&self) -> Result<MnbParams> {
        let Some(phi) = self.estimate("phi") else {
            bail!("a {} report has no phi; residual diagnostics need an mnb or nb fit", self.model.name());
        };
        Ok(MnbParams::new(self.beta(), phi)?)
    }

    pub fn pglg_params(&self) -> Result<PglgParams> {
        let Some(sigma) = self.estimate("sigma") else {
            bail!("a {} report has no sigma", self.model.name());
        };
        Ok(PglgParams::new(self.beta(), sigma, self.estimate("lambda").unwrap_or(0.0))?)
    }

    /// The fit as the library type, for AIC comparison.
    pub fn as_fit_result(&self) -> FitResult {
        FitResult {
            names: self.parameters.iter().map(|p| p.name.clone()).collect(),
            estimates: self.parameters.iter().map(|p| p.estimate).collect(),
            std_errors: self.parameters.iter().map(|p| p.se).collect(),
            loglik: self.loglik,
            aic: self.aic,
            n_iterations: self.iterations,
            converged: self.converged,
            n_obs: self.n_obs,
            n_free: self.n_free,
            trace: self.trace.clone(),
        }
    }
}
