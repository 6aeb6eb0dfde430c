//! Multivariate negative binomial (MNB) regression.
//!
//! When the random intercept of the Poisson-GLG model has σ = λ > 0, the
//! frailty e^{bᵢ} is Gamma(φ, φ) with φ = λ⁻², and the cluster counts have
//! the closed-form joint law
//!
//! ```text
//! f(yᵢ) = Γ(φ + yᵢ₊) φ^φ / (Γ(φ) Πⱼ yᵢⱼ!) · Πⱼ μᵢⱼ^{yᵢⱼ} / (φ + μᵢ₊)^{φ + yᵢ₊}
//! ```
//!
//! with log μᵢⱼ = xᵢⱼᵀβ + offsetᵢⱼ. This module evaluates that law, its
//! analytic score and Fisher information, fits (β, φ) by alternating Fisher
//! scoring on β with Newton–Raphson on φ, and computes deviance and
//! residual diagnostics.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ClusterData, Dataset};
use crate::error::{Error, Result};
use crate::fit::{FitResult, TraceRecord};
use crate::linalg::{check_full_rank, spd_inverse, spd_solve, symmetric_sqrt};
use crate::quadrature::compensated_sum;
use crate::special::{digamma, ln_factorial, ln_gamma_ratio, trigamma};

/// Above this cluster total the (j + φ)⁻¹ sums switch to digamma/trigamma.
const SERIES_LIMIT: u64 = 10_000;
/// K_φφ series stops once P(Y₊ > j) falls below this.
const TAIL_EPS: f64 = 1e-12;
const TAIL_MAX_TERMS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MnbParams {
    pub beta: Vec<f64>,
    pub phi: f64,
}

impl MnbParams {
    pub fn new(beta: Vec<f64>, phi: f64) -> Result<Self> {
        let p = MnbParams { beta, phi };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.phi.is_finite() && self.phi > 0.0) {
            return Err(Error::Domain(format!("dispersion phi must be positive and finite, got {}", self.phi)));
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Domain("non-finite regression coefficient".into()));
        }
        Ok(())
    }

    fn check_dims(&self, data: &Dataset) -> Result<()> {
        self.validate()?;
        if self.beta.len() != data.n_params() {
            return Err(Error::Domain(format!(
                "beta has {} entries but the design has {} columns",
                self.beta.len(),
                data.n_params()
            )));
        }
        Ok(())
    }
}

/// log f(y | μ, φ) of one cluster given its means.
pub fn log_pmf_from_means(y: &[u64], mu: &[f64], phi: f64) -> f64 {
    let y_plus: u64 = y.iter().sum();
    let mu_plus: f64 = mu.iter().sum();
    let yp = y_plus as f64;
    let mut v = ln_gamma_ratio(phi, yp) - yp * (phi + mu_plus).ln() - phi * (mu_plus / phi).ln_1p();
    for (&yj, &mj) in y.iter().zip(mu) {
        if yj > 0 {
            v += yj as f64 * mj.ln() - ln_factorial(yj);
        }
    }
    v
}

/// Univariate negative binomial log-pmf with mean `mu` and dispersion `phi`.
pub fn nb_log_pmf(y: u64, mu: f64, phi: f64) -> f64 {
    log_pmf_from_means(&[y], &[mu], phi)
}

/// Log of the MNB probability of one cluster's counts.
pub fn log_pmf(cluster: &ClusterData, params: &MnbParams) -> Result<f64> {
    params.validate()?;
    if params.beta.len() != cluster.x.ncols() {
        return Err(Error::Domain("beta length does not match the design".into()));
    }
    Ok(log_pmf_from_means(&cluster.y, &cluster.means(&params.beta), params.phi))
}

/// Σᵢ log f(yᵢ), summed in dataset order.
pub fn log_likelihood(data: &Dataset, params: &MnbParams) -> Result<f64> {
    params.check_dims(data)?;
    let parts: Vec<f64> = data
        .clusters
        .par_iter()
        .map(|c| log_pmf_from_means(&c.y, &c.means(&params.beta), params.phi))
        .collect();
    Ok(compensated_sum(parts))
}

/// Σ_{j<n} 1/(j + φ) = ψ(φ + n) − ψ(φ).
fn harmonic_shift(phi: f64, n: u64) -> f64 {
    if n > SERIES_LIMIT {
        digamma(phi + n as f64) - digamma(phi)
    } else {
        (0..n).map(|j| 1.0 / (j as f64 + phi)).sum()
    }
}

/// Σ_{j<n} 1/(j + φ)² = ψ′(φ) − ψ′(φ + n).
fn harmonic_shift_sq(phi: f64, n: u64) -> f64 {
    if n > SERIES_LIMIT {
        trigamma(phi) - trigamma(phi + n as f64)
    } else {
        (0..n).map(|j| (j as f64 + phi).powi(-2)).sum()
    }
}

/// U_φ contribution of one cluster.
fn phi_score_term(phi: f64, y_plus: u64, mu_plus: f64) -> f64 {
    let yp = y_plus as f64;
    harmonic_shift(phi, y_plus) - yp / (phi + mu_plus) - (mu_plus / phi).ln_1p() + mu_plus / (phi + mu_plus)
}

/// ∂U_φ/∂φ contribution of one cluster.
fn phi_hessian_term(phi: f64, y_plus: u64, mu_plus: f64) -> f64 {
    let yp = y_plus as f64;
    let s = phi + mu_plus;
    -harmonic_shift_sq(phi, y_plus) + mu_plus / (phi * s) - mu_plus / (s * s) + yp / (s * s)
}

/// Score vector (U_β, U_φ).
#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    pub u_beta: DVector<f64>,
    pub u_phi: f64,
}

impl Score {
    pub fn max_abs(&self) -> f64 {
        self.u_beta.amax().max(self.u_phi.abs())
    }
}

/// Expected information, block diagonal in (β, φ).
#[derive(Debug, Clone, PartialEq)]
pub struct FisherInfo {
    pub k_beta: DMatrix<f64>,
    pub k_phi: f64,
}

/// Score and information together.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreInfo {
    pub u_beta: DVector<f64>,
    pub u_phi: f64,
    pub k_beta: DMatrix<f64>,
    pub k_phi: f64,
}

/// Wᵢ = D(μᵢ) − μᵢμᵢᵀ/(φ + μᵢ₊).
pub fn working_weights(mu: &[f64], phi: f64) -> DMatrix<f64> {
    let mu_plus: f64 = mu.iter().sum();
    let v = DVector::from_column_slice(mu);
    DMatrix::from_diagonal(&v) - (&v * v.transpose()) / (phi + mu_plus)
}

fn cluster_score(c: &ClusterData, beta: &[f64], phi: f64) -> (DVector<f64>, f64) {
    let mu = c.means(beta);
    let mu_plus: f64 = mu.iter().sum();
    let y_plus = c.total();
    let a = (phi + y_plus as f64) / (phi + mu_plus);
    let resid = DVector::from_iterator(c.size(), c.y.iter().zip(&mu).map(|(&y, &m)| y as f64 - a * m));
    (c.x.transpose() * resid, phi_score_term(phi, y_plus, mu_plus))
}

/// U_β = Σᵢ Xᵢᵀ(yᵢ − aᵢμᵢ), aᵢ = (1 + yᵢ₊/φ)/(1 + μᵢ₊/φ), and
/// U_φ = Σᵢ {Σ_{j<yᵢ₊}(j + φ)⁻¹ − yᵢ₊/(φ + μᵢ₊) − ln(1 + μᵢ₊/φ) + μᵢ₊/(φ + μᵢ₊)}.
pub fn score(data: &Dataset, params: &MnbParams) -> Result<Score> {
    params.check_dims(data)?;
    let parts: Vec<(DVector<f64>, f64)> = data
        .clusters
        .par_iter()
        .map(|c| cluster_score(c, &params.beta, params.phi))
        .collect();
    let mut u_beta = DVector::zeros(data.n_params());
    let mut u_phi = 0.0;
    for (ub, up) in parts {
        u_beta += ub;
        u_phi += up;
    }
    Ok(Score { u_beta, u_phi })
}

/// −∂U_β/∂βᵀ on the observed data: Σᵢ aᵢ XᵢᵀWᵢXᵢ. Its expectation is K_ββ.
pub fn observed_info_beta(data: &Dataset, params: &MnbParams) -> Result<DMatrix<f64>> {
    params.check_dims(data)?;
    let p = data.n_params();
    let mut k = DMatrix::zeros(p, p);
    for c in &data.clusters {
        let mu = c.means(&params.beta);
        let mu_plus: f64 = mu.iter().sum();
        let a = (params.phi + c.total() as f64) / (params.phi + mu_plus);
        k += (c.x.transpose() * working_weights(&mu, params.phi) * &c.x) * a;
    }
    Ok(k)
}

/// L̈_φφ = ∂U_φ/∂φ on the observed data.
pub fn phi_hessian(data: &Dataset, params: &MnbParams) -> Result<f64> {
    params.check_dims(data)?;
    Ok(data
        .clusters
        .iter()
        .map(|c| {
            let mu_plus: f64 = c.means(&params.beta).iter().sum();
            phi_hessian_term(params.phi, c.total(), mu_plus)
        })
        .sum())
}

/// Expected −∂U_φ/∂φ for one cluster:
/// Σ_{j≥0} (j + φ)⁻² P(Y₊ > j) − μ₊/(φ(φ + μ₊)), with Y₊ ~ NB(μ₊, φ).
pub fn k_phi_cluster(mu_plus: f64, phi: f64) -> f64 {
    let p_ratio = mu_plus / (phi + mu_plus);
    let mut log_pmf = -phi * (mu_plus / phi).ln_1p();
    let mut cdf = 0.0;
    let mut series = 0.0;
    for j in 0..TAIL_MAX_TERMS {
        let jf = j as f64;
        cdf += log_pmf.exp();
        let survival = (1.0 - cdf).max(0.0);
        series += survival / ((jf + phi) * (jf + phi));
        if jf > mu_plus && survival < TAIL_EPS {
            break;
        }
        log_pmf += ((jf + phi) / (jf + 1.0)).ln() + p_ratio.ln();
    }
    series - mu_plus / (phi * (mu_plus + phi))
}

/// K_ββ = Σᵢ XᵢᵀWᵢXᵢ and K_φφ.
pub fn fisher_info(data: &Dataset, params: &MnbParams) -> Result<FisherInfo> {
    params.check_dims(data)?;
    let p = data.n_params();
    let parts: Vec<(DMatrix<f64>, f64)> = data
        .clusters
        .par_iter()
        .map(|c| {
            let mu = c.means(&params.beta);
            let mu_plus: f64 = mu.iter().sum();
            let kb = c.x.transpose() * working_weights(&mu, params.phi) * &c.x;
            (kb, k_phi_cluster(mu_plus, params.phi))
        })
        .collect();
    let mut k_beta = DMatrix::zeros(p, p);
    let mut k_phi = 0.0;
    for (kb, kp) in parts {
        k_beta += kb;
        k_phi += kp;
    }
    Ok(FisherInfo { k_beta, k_phi })
}

pub fn score_info(data: &Dataset, params: &MnbParams) -> Result<ScoreInfo> {
    let s = score(data, params)?;
    let k = fisher_info(data, params)?;
    Ok(ScoreInfo {
        u_beta: s.u_beta,
        u_phi: s.u_phi,
        k_beta: k.k_beta,
        k_phi: k.k_phi,
    })
}

/// Pearson correlation between two counts of the same cluster.
pub fn intraclass_corr(mu_j: f64, mu_k: f64, phi: f64) -> Result<f64> {
    if !(mu_j > 0.0 && mu_k > 0.0 && phi > 0.0) || mu_j.is_nan() || mu_k.is_nan() {
        return Err(Error::Domain("intraclass correlation needs positive means and dispersion".into()));
    }
    Ok((mu_j / (phi + mu_j)).sqrt() * (mu_k / (phi + mu_k)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MnbFitOptions {
    pub max_iter: usize,
    /// Converged when max(|U_β|∞, |U_φ|) falls below this.
    pub score_tol: f64,
    pub max_halvings: usize,
}

impl Default for MnbFitOptions {
    fn default() -> Self {
        MnbFitOptions {
            max_iter: 200,
            score_tol: 1e-6,
            max_halvings: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MnbFit {
    pub params: MnbParams,
    pub result: FitResult,
}

/// Independence Poisson fit by iteratively reweighted least squares.
pub fn poisson_fit(data: &Dataset) -> Result<Vec<f64>> {
    check_full_rank(data)?;
    if data.clusters.iter().all(|c| c.total() == 0) {
        return Err(Error::Invalid("all counts are zero; the model has no finite MLE".into()));
    }
    let p = data.n_params();
    let mut beta: Option<Vec<f64>> = None;
    let mut last_dev = f64::INFINITY;
    for _ in 0..100 {
        let mut xtwx = DMatrix::zeros(p, p);
        let mut xtwz = DVector::zeros(p);
        let mut dev = 0.0;
        for c in &data.clusters {
            let eta: Vec<f64> = match &beta {
                Some(b) => c.linear_predictor(b),
                None => c.y.iter().map(|&y| (y as f64 + 0.5).ln()).collect(),
            };
            for j in 0..c.size() {
                let mu = eta[j].exp();
                let y = c.y[j] as f64;
                let z = eta[j] - c.offset[j] + (y - mu) / mu;
                let row = c.x.row(j).transpose();
                xtwx += &row * row.transpose() * mu;
                xtwz += row * (mu * z);
                dev += if y > 0.0 { y * (y / mu).ln() } else { 0.0 } - (y - mu);
            }
        }
        let next = spd_solve(&xtwx, &xtwz).ok_or_else(|| Error::Singular("Poisson IRLS normal equations".into()))?;
        beta = Some(next.iter().copied().collect());
        if (last_dev - dev).abs() <= 1e-12 * (dev.abs() + 1.0) {
            break;
        }
        last_dev = dev;
    }
    let beta = beta.expect("at least one IRLS iteration");
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Invalid("Poisson start diverged".into()));
    }
    Ok(beta)
}

/// Method-of-moments dispersion start from Poisson fitted means.
fn moment_start_phi(data: &Dataset, beta: &[f64]) -> f64 {
    let mut n = 0.0;
    let (mut mu2, mut mu1, mut sq) = (0.0, 0.0, 0.0);
    for c in &data.clusters {
        for (&y, m) in c.y.iter().zip(c.means(beta)) {
            n += 1.0;
            mu1 += m;
            mu2 += m * m;
            sq += (y as f64 - m).powi(2);
        }
    }
    let excess = (sq / n - mu1 / n).max(1e-8);
    (mu2 / n / excess).clamp(0.1, 1e6)
}

// Exact change in log-likelihood when β moves by `delta` at fixed φ.
fn beta_step_gain(data: &Dataset, beta: &[f64], delta: &[f64], phi: f64) -> f64 {
    let parts: Vec<f64> = data
        .clusters
        .par_iter()
        .map(|c| {
            let eta = c.linear_predictor(beta);
            let mut gain = 0.0;
            let mut mu_plus = 0.0;
            let mut mu_change = 0.0;
            for j in 0..c.size() {
                let d: f64 = c.x.row(j).iter().zip(delta).map(|(x, b)| x * b).sum();
                let mu = eta[j].exp();
                mu_plus += mu;
                mu_change += mu * d.exp_m1();
                gain += c.y[j] as f64 * d;
            }
            gain - (phi + c.total() as f64) * (mu_change / (phi + mu_plus)).ln_1p()
        })
        .collect();
    compensated_sum(parts)
}

// Exact change in log-likelihood when φ moves to φ + d at fixed β.
fn phi_step_gain(totals: &[(u64, f64)], phi: f64, d: f64) -> f64 {
    let new = phi + d;
    compensated_sum(totals.iter().map(|&(y_plus, mu_plus)| {
            let yp = y_plus as f64;
            let gamma_part = if y_plus > SERIES_LIMIT {
                ln_gamma_ratio(new, yp) - ln_gamma_ratio(phi, yp)
            } else {
                (0..y_plus).map(|j| (d / (j as f64 + phi)).ln_1p()).sum()
            };
            // h(φ) = φ ln(1 + μ/φ); h(φ + d) − h(φ) split to avoid cancellation
            let log_ratio_change = (d / (phi + mu_plus)).ln_1p() - (d / phi).ln_1p();
            let h_change = d * (mu_plus / new).ln_1p() + phi * log_ratio_change;
            gamma_part - h_change - yp * (d / (phi + mu_plus)).ln_1p()
        }))
}

/// Maximum likelihood fit of (β, φ).
///
/// Each iteration takes a Fisher-scoring step on β at the current φ, then a
/// Newton–Raphson step on φ at the new β. A step is halved (up to
/// `max_halvings` times) until it strictly increases the log-likelihood and
/// keeps φ positive; a sub-step that cannot do so is skipped.
pub fn fit(data: &Dataset, init: Option<&MnbParams>, opts: &MnbFitOptions) -> Result<MnbFit> {
    check_full_rank(data)?;
    let (mut beta, mut phi) = match init {
        Some(p) => {
            p.check_dims(data)?;
            (p.beta.clone(), p.phi)
        }
        None => {
            let b = poisson_fit(data)?;
            let phi = moment_start_phi(data, &b);
            (b, phi)
        }
    };
    let p = data.n_params();
    let mut params = MnbParams { beta: beta.clone(), phi };
    let mut ll = log_likelihood(data, &params)?;
    let mut sc = score(data, &params)?;
    let mut trace = vec![TraceRecord {
        iteration: 0,
        loglik: ll,
        max_gradient: sc.max_abs(),
    }];
    let mut converged = sc.max_abs() < opts.score_tol;
    let mut iterations = 0;
    // trace values are the start plus accepted exact gains, so rounding in
    // re-evaluating the full sum cannot make them decrease
    let mut gained = 0.0;

    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let mut progressed = false;

        // Fisher scoring on β
        let info = fisher_info_beta(data, &beta, phi);
        if let Some(step) = spd_solve(&info, &sc.u_beta) {
            let mut t = 1.0;
            for _ in 0..=opts.max_halvings {
                let delta: Vec<f64> = step.iter().map(|s| s * t).collect();
                let gain = beta_step_gain(data, &beta, &delta, phi);
                if gain > 0.0 && gain.is_finite() {
                    for (b, d) in beta.iter_mut().zip(&delta) {
                        *b += d;
                    }
                    gained += gain;
                    progressed = true;
                    break;
                }
                t *= 0.5;
            }
        }

        // Newton–Raphson on φ
        let totals: Vec<(u64, f64)> = data
            .clusters
            .iter()
            .map(|c| (c.total(), c.means(&beta).iter().sum()))
            .collect();
        let u_phi: f64 = totals.iter().map(|&(y, m)| phi_score_term(phi, y, m)).sum();
        let l_phi: f64 = totals.iter().map(|&(y, m)| phi_hessian_term(phi, y, m)).sum();
        let raw = if l_phi < 0.0 { -u_phi / l_phi } else { u_phi.signum() * phi };
        if raw != 0.0 && raw.is_finite() {
            let mut t = 1.0;
            for _ in 0..=opts.max_halvings {
                let d = raw * t;
                if phi + d > 0.0 {
                    let gain = phi_step_gain(&totals, phi, d);
                    if gain > 0.0 && gain.is_finite() {
                        phi += d;
                        gained += gain;
                        progressed = true;
                        break;
                    }
                }
                t *= 0.5;
            }
        }

        params = MnbParams { beta: beta.clone(), phi };
        ll = log_likelihood(data, &params)?;
        sc = score(data, &params)?;
        if !progressed {
            break;
        }
        trace.push(TraceRecord {
            iteration: iterations,
            loglik: trace[0].loglik + gained,
            max_gradient: sc.max_abs(),
        });
        converged = sc.max_abs() < opts.score_tol;
    }

    let info = fisher_info(data, &params)?;
    let std_errors = spd_inverse(&info.k_beta).and_then(|inv| {
        if info.k_phi <= 0.0 {
            return None;
        }
        let mut se: Vec<f64> = (0..p).map(|k| inv[(k, k)].sqrt()).collect();
        se.push((1.0 / info.k_phi).sqrt());
        se.iter().all(|s| s.is_finite() && *s > 0.0).then_some(se)
    });
    let mut names = data.column_names.clone();
    names.push("phi".into());
    let mut estimates = beta.clone();
    estimates.push(phi);
    let result = FitResult::new(
        names,
        estimates,
        std_errors,
        ll,
        p + 1,
        iterations,
        converged,
        data.n_obs(),
        trace,
    );
    Ok(MnbFit { params, result })
}

fn fisher_info_beta(data: &Dataset, beta: &[f64], phi: f64) -> DMatrix<f64> {
    let p = data.n_params();
    let parts: Vec<DMatrix<f64>> = data
        .clusters
        .par_iter()
        .map(|c| c.x.transpose() * working_weights(&c.means(beta), phi) * &c.x)
        .collect();
    parts.into_iter().fold(DMatrix::zeros(p, p), |acc, k| acc + k)
}

/// MNB deviance at fitted means, with φ held fixed:
/// Σᵢ 2[φ ln{(φ + μ̂ᵢ₊)/(φ + yᵢ₊)} + Σⱼ yᵢⱼ ln{yᵢⱼ(φ + μ̂ᵢ₊)/(μ̂ᵢⱼ(φ + yᵢ₊))}].
pub fn deviance(data: &Dataset, fitted: &MnbParams) -> Result<f64> {
    fitted.check_dims(data)?;
    Ok(data
        .clusters
        .iter()
        .map(|c| cluster_deviance(&c.y, &c.means(&fitted.beta), fitted.phi))
        .sum())
}

/// One cluster's deviance term given fitted means.
pub fn cluster_deviance(y: &[u64], mu: &[f64], phi: f64) -> f64 {
    let yp = y.iter().sum::<u64>() as f64;
    let mp: f64 = mu.iter().sum();
    let mut v = phi * ((phi + mp) / (phi + yp)).ln();
    for (&yj, &mj) in y.iter().zip(mu) {
        if yj > 0 {
            let yf = yj as f64;
            v += yf * ((yf / mj).ln() + ((phi + mp) / (phi + yp)).ln());
        }
    }
    2.0 * v
}

/// Per-observation components d²ᵢⱼ: the cluster-level φ term is shared
/// equally among the mᵢ observations. Components can be negative.
pub fn cluster_deviance_components(y: &[u64], mu: &[f64], phi: f64) -> Vec<f64> {
    let m = y.len() as f64;
    let yp = y.iter().sum::<u64>() as f64;
    let mp: f64 = mu.iter().sum();
    let shared = phi / m * ((phi + mp) / (phi + yp)).ln();
    y.iter()
        .zip(mu)
        .map(|(&yj, &mj)| {
            if yj == 0 {
                2.0 * shared
            } else {
                let yf = yj as f64;
                2.0 * (shared + yf * ((yf * (phi + mp)) / (mj * (phi + yp))).ln())
            }
        })
        .collect()
}

/// d²ᵢⱼ for every observation, grouped by cluster.
pub fn deviance_components(data: &Dataset, fitted: &MnbParams) -> Result<Vec<Vec<f64>>> {
    fitted.check_dims(data)?;
    Ok(data
        .clusters
        .iter()
        .map(|c| cluster_deviance_components(&c.y, &c.means(&fitted.beta), fitted.phi))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub cluster: String,
    /// 1-based position within the cluster.
    pub index: usize,
    pub y: u64,
    pub fitted: f64,
    pub leverage: f64,
    pub deviance_component: f64,
    /// Absent when the component is negative (or the leverage is 1).
    pub deviance_residual: Option<f64>,
    pub pearson: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub rows: Vec<ResidualRow>,
}

impl ResidualReport {
    pub fn pearson(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.pearson).collect()
    }

    /// Deviance-component residuals, or `None` if any is absent.
    pub fn deviance_residuals(&self) -> Option<Vec<f64>> {
        self.rows.iter().map(|r| r.deviance_residual).collect()
    }

    pub fn negative_components(&self) -> usize {
        self.rows.iter().filter(|r| r.deviance_component < 0.0).count()
    }
}

/// Leverages, deviance-component and Pearson residuals at fitted values.
///
/// hᵢⱼⱼ is the j-th diagonal of Wᵢ^{1/2}Xᵢ K⁻¹ XᵢᵀWᵢ^{1/2}, with K = Σᵢ XᵢᵀWᵢXᵢ
/// over the whole dataset and Wᵢ^{1/2} the symmetric square root.
///
/// Logs a warning when any deviance component is negative; those
/// observations get no deviance residual.
pub fn residuals(data: &Dataset, fitted: &MnbParams) -> Result<ResidualReport> {
    let report = residual_report(data, fitted)?;
    let negative = report.negative_components();
    if negative > 0 {
        warn!(
            "{negative} of {} negative deviance components; deviance residuals absent for those observations",
            report.rows.len()
        );
    }
    Ok(report)
}

/// [`residuals`] without the warning, for simulated replicates.
pub(crate) fn residual_report(data: &Dataset, fitted: &MnbParams) -> Result<ResidualReport> {
    fitted.check_dims(data)?;
    let phi = fitted.phi;
    let p = data.n_params();
    let mut k = DMatrix::zeros(p, p);
    let mut per_cluster = Vec::with_capacity(data.clusters.len());
    for c in &data.clusters {
        let mu = c.means(&fitted.beta);
        let w = working_weights(&mu, phi);
        k += c.x.transpose() * &w * &c.x;
        let (root, min_eig) = symmetric_sqrt(&w);
        if min_eig < -1e-10 {
            warn!("cluster {}: working weight matrix has eigenvalue {min_eig:e}; clipped to 0", c.id);
        }
        per_cluster.push((mu, root));
    }
    let k_inv = spd_inverse(&k).ok_or_else(|| Error::Singular("information matrix for leverages".into()))?;

    let mut rows = Vec::with_capacity(data.n_obs());
    for (c, (mu, root)) in data.clusters.iter().zip(per_cluster) {
        let a = c.x.transpose() * &root; // p × m
        let h = a.transpose() * &k_inv * &a;
        let d2 = cluster_deviance_components(&c.y, &mu, phi);
        for j in 0..c.size() {
            let y = c.y[j] as f64;
            let lev = h[(j, j)].clamp(0.0, 1.0);
            let diff = y - mu[j];
            let sign = if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            };
            let dev_res = (d2[j] >= 0.0 && lev < 1.0).then(|| sign * (2.0 * d2[j]).sqrt() / (1.0 - lev).sqrt());
            rows.push(ResidualRow {
                cluster: c.id.clone(),
                index: j + 1,
                y: c.y[j],
                fitted: mu[j],
                leverage: lev,
                deviance_component: d2[j],
                deviance_residual: dev_res,
                pearson: diff / (mu[j] + mu[j] * mu[j] / phi).sqrt(),
            });
        }
    }
    Ok(ResidualReport { rows })
}
