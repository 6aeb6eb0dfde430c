//! Random-intercept Poisson model with a GLG intercept.
//!
//! yᵢⱼ | bᵢ ~ Poisson(μᵢⱼ e^{bᵢ}), log μᵢⱼ = xᵢⱼᵀβ + offsetᵢⱼ, bᵢ ~ GLG(0, σ, λ).
//!
//! The cluster marginal ∫ Πⱼ f(yᵢⱼ | b) f_b(b) db has no closed form except
//! when σ = λ (see [`crate::mnb`]); it is computed by mode-recentred
//! Gauss–Hermite quadrature. With y₊ and μ₊ the cluster totals the
//! log-integrand is, up to a constant, y₊b − μ₊e^b + log f_b(b), which is
//! strictly concave, so the mode is found by Newton's method with analytic
//! derivatives. That keeps the likelihood a smooth function of the
//! parameters, which the finite-difference optimiser relies on.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ClusterData, Dataset};
use crate::error::{Error, Result};
use crate::fit::{FitResult, TraceRecord};
use crate::glg::{self, GlgDensity, GlgParams};
use crate::linalg::{check_full_rank, spd_inverse};
use crate::mnb;
use crate::quadrature::{compensated_sum, QuadratureRule, Recentring};
use crate::special::ln_factorial;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PglgParams {
    pub beta: Vec<f64>,
    pub sigma: f64,
    pub lambda: f64,
}

impl PglgParams {
    pub fn new(beta: Vec<f64>, sigma: f64, lambda: f64) -> Result<Self> {
        let p = PglgParams { beta, sigma, lambda };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Domain("non-finite regression coefficient".into()));
        }
        self.random_effect().map(|_| ())
    }

    /// The GLG(0, σ, λ) law of the random intercept.
    pub fn random_effect(&self) -> Result<GlgParams> {
        GlgParams::new(0.0, self.sigma, self.lambda)
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

const MODE_MAX_ITER: usize = 200;

// log-integrand of one cluster: constant + y₊b − μ₊e^b + log f_b(b)
struct Integrand {
    constant: f64,
    y_plus: f64,
    mu_plus: f64,
    density: GlgDensity,
}

impl Integrand {
    fn new(c: &ClusterData, beta: &[f64], density: GlgDensity) -> Self {
        let eta = c.linear_predictor(beta);
        let mut constant = 0.0;
        let mut mu_plus = 0.0;
        for (&y, &e) in c.y.iter().zip(&eta) {
            mu_plus += e.exp();
            if y > 0 {
                constant += y as f64 * e - ln_factorial(y);
            }
        }
        Integrand {
            constant,
            y_plus: c.total() as f64,
            mu_plus,
            density,
        }
    }

    fn varying(&self, b: f64) -> f64 {
        self.y_plus * b - self.mu_plus * b.exp() + self.density.log_pdf(b)
    }

    fn derivatives(&self, b: f64) -> (f64, f64) {
        let (p1, p2) = self.density.log_pdf_derivatives(b);
        let m = self.mu_plus * b.exp();
        (self.y_plus - m + p1, -m + p2)
    }

    fn recentre(&self) -> Result<Recentring> {
        let mut b = 0.0;
        let mut g = self.varying(b);
        for iter in 0..MODE_MAX_ITER {
            let (d1, d2) = self.derivatives(b);
            if !(d2 < 0.0 && d1.is_finite()) {
                return Err(Error::ModeSearch { iterations: iter, last: b });
            }
            let scale = (-1.0 / d2).sqrt();
            let step = (-d1 / d2).clamp(-5.0, 5.0);
            if step.abs() <= 1e-10 * scale {
                return Ok(Recentring { mode: b, scale });
            }
            if step.abs() < 1e-3 * scale {
                // quadratic region: the gain is below what g can resolve
                b += step;
                g = self.varying(b);
                continue;
            }
            // concave objective: halve until it does not decrease
            let mut t = 1.0;
            let mut next = b + step;
            let mut gn = self.varying(next);
            while !(gn >= g) && t > 1e-12 {
                t *= 0.5;
                next = b + t * step;
                gn = self.varying(next);
            }
            if !(gn >= g) {
                let (_, d2) = self.derivatives(b);
                return Ok(Recentring {
                    mode: b,
                    scale: (-1.0 / d2).sqrt(),
                });
            }
            b = next;
            g = gn;
        }
        Err(Error::ModeSearch {
            iterations: MODE_MAX_ITER,
            last: b,
        })
    }
}

fn integrand(c: &ClusterData, p: &PglgParams) -> Result<Integrand> {
    if p.beta.len() != c.x.ncols() {
        return Err(Error::Domain("beta length does not match the design".into()));
    }
    Ok(Integrand::new(c, &p.beta, GlgDensity::new(p.random_effect()?)?))
}

/// log ∫ Πⱼ Poisson(yᵢⱼ; μᵢⱼe^b) f_b(b) db for one cluster.
pub fn cluster_log_marginal(c: &ClusterData, p: &PglgParams, rule: &QuadratureRule) -> Result<f64> {
    let f = integrand(c, p)?;
    let centre = f.recentre().map_err(|e| e.in_cluster(&c.id))?;
    Ok(f.constant + rule.log_integrate_at(|b| f.varying(b), &centre))
}

/// Σᵢ of the cluster log-marginals, reduced in dataset order.
pub fn log_likelihood(d: &Dataset, p: &PglgParams, rule: &QuadratureRule) -> Result<f64> {
    p.check_dims(d)?;
    Ok(compensated_sum(cluster_log_marginals(d, p, rule)?))
}

fn cluster_log_marginals(d: &Dataset, p: &PglgParams, rule: &QuadratureRule) -> Result<Vec<f64>> {
    d.clusters.par_iter().map(|c| cluster_log_marginal(c, p, rule)).collect()
}

/// Empirical Bayes predictions E[bᵢ | yᵢ], one per cluster in dataset order.
pub fn predict_random_effects(d: &Dataset, p: &PglgParams, rule: &QuadratureRule) -> Result<Vec<(String, f64)>> {
    p.check_dims(d)?;
    d.clusters
        .par_iter()
        .map(|c| {
            let f = integrand(c, p)?;
            let centre = f.recentre().map_err(|e| e.in_cluster(&c.id))?;
            let pts: Vec<(f64, f64)> = rule.adapted_points(&centre).map(|(b, lw)| (b, lw + f.varying(b))).collect();
            let top = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
            let (mut num, mut den) = (0.0, 0.0);
            for (b, v) in pts {
                let w = (v - top).exp();
                num += w * b;
                den += w;
            }
            Ok((c.id.clone(), num / den))
        })
        .collect()
}

/// Marginal means, variances and covariance matrix of a cluster's counts.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalMoments {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub covariance: DMatrix<f64>,
}

/// E yᵢⱼ = μᵢⱼE e^b, Var yᵢⱼ = μᵢⱼ²Var e^b + μᵢⱼE e^b, Cov = μᵢⱼμᵢₖVar e^b.
pub fn marginal_moments(c: &ClusterData, p: &PglgParams) -> Result<MarginalMoments> {
    let re = p.random_effect()?;
    let e1 = glg::exp_moment(&re, 1)?;
    let e2 = glg::exp_moment(&re, 2)?;
    let var_eb = e2 - e1 * e1;
    let mu = c.means(&p.beta);
    let m = mu.len();
    let covariance = DMatrix::from_fn(m, m, |j, k| {
        let base = mu[j] * mu[k] * var_eb;
        if j == k {
            base + mu[j] * e1
        } else {
            base
        }
    });
    Ok(MarginalMoments {
        means: mu.iter().map(|v| v * e1).collect(),
        variances: (0..m).map(|j| covariance[(j, j)]).collect(),
        covariance,
    })
}

/// How λ is treated during fitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LambdaMode {
    Free,
    /// Held at the given value; 0 gives the Poisson-normal model.
    Fixed(f64),
    /// λ = σ, the multivariate negative binomial reparameterisation.
    TiedToSigma,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PglgFitOptions {
    pub lambda: LambdaMode,
    pub gtol: f64,
    pub ftol: f64,
    pub max_iter: usize,
    pub order: usize,
}

impl Default for PglgFitOptions {
    fn default() -> Self {
        PglgFitOptions {
            lambda: LambdaMode::Free,
            gtol: 1e-5,
            ftol: 1e-9,
            max_iter: 200,
            order: crate::quadrature::DEFAULT_ORDER,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PglgFit {
    pub params: PglgParams,
    pub result: FitResult,
}

// Unconstrained coordinates θ = (β₁s₁, …, βₚsₚ, log σ[, λ]), where sₖ is the
// root-mean-square of design column k, so every coefficient is on the scale
// of a unit-size covariate when differenced.
struct Objective<'a> {
    data: &'a Dataset,
    rule: QuadratureRule,
    mode: LambdaMode,
    p: usize,
    scales: Vec<f64>,
}

impl Objective<'_> {
    fn params(&self, theta: &[f64]) -> PglgParams {
        let sigma = theta[self.p].exp();
        let lambda = match self.mode {
            LambdaMode::Free => theta[self.p + 1],
            LambdaMode::Fixed(l) => l,
            LambdaMode::TiedToSigma => sigma,
        };
        PglgParams {
            beta: theta[..self.p].iter().zip(&self.scales).map(|(t, s)| t / s).collect(),
            sigma,
            lambda,
        }
    }

    /// Per-cluster log-marginals, or `None` where they cannot be evaluated.
    fn contributions(&self, theta: &[f64]) -> Option<Vec<f64>> {
        let params = self.params(theta);
        params.validate().ok()?;
        let v = cluster_log_marginals(self.data, &params, &self.rule).ok()?;
        v.iter().all(|x| x.is_finite()).then_some(v)
    }

    /// Negative log-likelihood; +∞ where it cannot be evaluated.
    fn shifted(&self, theta: &[f64], moves: &[(usize, f64)]) -> Option<Vec<f64>> {
        let mut x = theta.to_vec();
        for &(k, d) in moves {
            x[k] += d;
        }
        self.contributions(&x)
    }

    // Differences are formed cluster by cluster before summing, which keeps
    // the rounding error at the size of one contribution rather than of the
    // whole log-likelihood.
    fn combine(terms: &[(f64, &[f64])]) -> f64 {
        let n = terms[0].1.len();
        compensated_sum((0..n).map(|i| terms.iter().map(|(w, v)| w * v[i]).sum::<f64>()))
    }

    /// Central-difference gradient of the negative log-likelihood.
    fn gradient(&self, theta: &[f64]) -> Option<DVector<f64>> {
        let mut g = DVector::zeros(theta.len());
        for k in 0..theta.len() {
            let h = 1e-6 * theta[k].abs().max(1.0);
            let up = self.shifted(theta, &[(k, h)])?;
            let down = self.shifted(theta, &[(k, -h)])?;
            g[k] = -Self::combine(&[(1.0, &up), (-1.0, &down)]) / (2.0 * h);
        }
        Some(g)
    }

    fn hessian(&self, theta: &[f64]) -> Option<DMatrix<f64>> {
        let n = theta.len();
        let h: Vec<f64> = theta.iter().map(|t| 1e-4 * t.abs().max(1.0)).collect();
        let centre = self.contributions(theta)?;
        let mut hess = DMatrix::zeros(n, n);
        for k in 0..n {
            let up = self.shifted(theta, &[(k, h[k])])?;
            let down = self.shifted(theta, &[(k, -h[k])])?;
            hess[(k, k)] = -Self::combine(&[(1.0, &up), (-2.0, &centre), (1.0, &down)]) / (h[k] * h[k]);
            for l in 0..k {
                let pp = self.shifted(theta, &[(k, h[k]), (l, h[l])])?;
                let pm = self.shifted(theta, &[(k, h[k]), (l, -h[l])])?;
                let mp = self.shifted(theta, &[(k, -h[k]), (l, h[l])])?;
                let mm = self.shifted(theta, &[(k, -h[k]), (l, -h[l])])?;
                let v = -Self::combine(&[(1.0, &pp), (-1.0, &pm), (-1.0, &mp), (1.0, &mm)]) / (4.0 * h[k] * h[l]);
                hess[(k, l)] = v;
                hess[(l, k)] = v;
            }
        }
        Some(hess)
    }
}

/// Maximum likelihood fit over (β, log σ, λ) by BFGS with central-difference
/// gradients and a backtracking line search.
///
/// Coefficients are handled internally on the scale of unit-RMS design
/// columns, and the gradient tolerance applies in those coordinates.
/// Standard errors come from the inverse of the numerical Hessian of the
/// negative log-likelihood at the optimum; σ's is mapped back from log σ by
/// the delta method.
pub fn fit(data: &Dataset, init: Option<&PglgParams>, opts: &PglgFitOptions) -> Result<PglgFit> {
    check_full_rank(data)?;
    let p = data.n_params();
    let start = match init {
        Some(s) => {
            s.check_dims(data)?;
            s.clone()
        }
        None => PglgParams {
            beta: mnb::poisson_fit(data)?,
            sigma: 0.5,
            lambda: 0.1,
        },
    };
    let scales: Vec<f64> = (0..p)
        .map(|k| {
            let ss: f64 = data.clusters.iter().flat_map(|c| c.x.column(k).iter().map(|v| v * v).collect::<Vec<_>>()).sum();
            let rms = (ss / data.n_obs() as f64).sqrt();
            if rms > 0.0 { rms } else { 1.0 }
        })
        .collect();
    let mut theta: Vec<f64> = start.beta.iter().zip(&scales).map(|(b, s)| b * s).collect();
    match opts.lambda {
        LambdaMode::Free => {
            theta.push(start.sigma.ln());
            theta.push(start.lambda);
        }
        LambdaMode::Fixed(_) => theta.push(start.sigma.ln()),
        LambdaMode::TiedToSigma => theta.push(if init.is_some() { start.sigma.ln() } else { 0.5f64.ln() }),
    }
    if let LambdaMode::Fixed(l) = opts.lambda {
        if !l.is_finite() {
            return Err(Error::Domain("fixed lambda must be finite".into()));
        }
    }
    let obj = Objective {
        data,
        rule: crate::quadrature::gauss_hermite(opts.order)?,
        mode: opts.lambda,
        p,
        scales: scales.clone(),
    };
    let n = theta.len();

    let mut contrib = obj.contributions(&theta);
    let mut f = contrib.as_ref().map_or(f64::INFINITY, |v| -compensated_sum(v.iter().copied()));
    let gradient_at = |x: &[f64]| {
        obj.gradient(x)
            .ok_or_else(|| Error::Invalid("log-likelihood cannot be differenced at the current estimate".into()))
    };
    if !f.is_finite() {
        // surface the underlying error
        log_likelihood(data, &obj.params(&theta), &obj.rule)?;
        return Err(Error::Invalid("log-likelihood is not finite at the starting values".into()));
    }
    let mut g = gradient_at(&theta)?;
    let mut h_inv = DMatrix::<f64>::identity(n, n);
    let mut fresh = true;
    let mut trace = vec![TraceRecord {
        iteration: 0,
        loglik: -f,
        max_gradient: g.amax(),
    }];
    let mut last_change = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    loop {
        if g.amax() < opts.gtol && last_change <= opts.ftol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        let mut dir = -(&h_inv * &g);
        if dir.dot(&g) >= 0.0 {
            h_inv = DMatrix::identity(n, n);
            fresh = true;
            dir = -g.clone();
        }
        // keep trial points within a sane distance
        let longest = dir.amax();
        if longest > 2.0 {
            dir *= 2.0 / longest;
        }
        let slope = dir.dot(&g);
        // below this the objective cannot resolve a decrease
        let resolution = 1e-13 * f.abs().max(1.0);
        let mut t = 1.0;
        let mut accepted = None;
        if -slope < resolution {
            let trial: Vec<f64> = theta.iter().zip(dir.iter()).map(|(a, d)| a + d).collect();
            if let (Some(cur), Some(new)) = (contrib.as_ref(), obj.contributions(&trial)) {
                let decrease = Objective::combine(&[(1.0, new.as_slice()), (-1.0, cur.as_slice())]);
                if decrease > -resolution {
                    let ft = -compensated_sum(new.iter().copied());
                    accepted = Some((trial, ft, new, decrease.max(0.0)));
                }
            }
        }
        for _ in 0..60 {
            if accepted.is_some() {
                break;
            }
            let trial: Vec<f64> = theta.iter().zip(dir.iter()).map(|(a, d)| a + t * d).collect();
            if let (Some(cur), Some(new)) = (contrib.as_ref(), obj.contributions(&trial)) {
                // decrease in the objective, accumulated cluster by cluster
                let decrease = Objective::combine(&[(1.0, new.as_slice()), (-1.0, cur.as_slice())]);
                if decrease > 0.0 && -decrease <= 1e-4 * t * slope {
                    let ft = -compensated_sum(new.iter().copied());
                    accepted = Some((trial, ft, new, decrease));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((next, f_next, c_next, decrease)) = accepted else {
            if fresh {
                // no decrease is available along the gradient: the change
                // in log-likelihood is zero to working precision
                converged = g.amax() < opts.gtol;
                break;
            }
            h_inv = DMatrix::identity(n, n);
            fresh = true;
            continue;
        };
        iterations += 1;
        let g_next = gradient_at(&next)?;
        let s = DVector::from_iterator(n, next.iter().zip(&theta).map(|(a, b)| a - b));
        let y = &g_next - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh {
                // scale the initial inverse Hessian to the observed curvature
                h_inv *= sy / y.dot(&y);
            }
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(n, n);
            let left = &eye - (&s * y.transpose()) * rho;
            let right = &eye - (&y * s.transpose()) * rho;
            h_inv = &left * &h_inv * &right + (&s * s.transpose()) * rho;
            fresh = false;
        }
        last_change = decrease / f_next.abs().max(1.0);
        contrib = Some(c_next);
        theta = next;
        f = f_next;
        g = g_next;
        trace.push(TraceRecord {
            iteration: iterations,
            loglik: -f,
            max_gradient: g.amax(),
        });
    }

    let params = obj.params(&theta);
    let std_errors = obj.hessian(&theta).and_then(|hess| spd_inverse(&hess)).and_then(|cov| {
        let mut se: Vec<f64> = (0..n).map(|k| cov[(k, k)].sqrt()).collect();
        for (v, s) in se.iter_mut().zip(&scales) {
            *v /= s;
        }
        // delta method: sd(σ) = σ·sd(log σ)
        se[p] *= params.sigma;
        se.iter().all(|v| v.is_finite() && *v > 0.0).then_some(se)
    });
    let mut names = data.column_names.clone();
    names.push("sigma".into());
    let mut estimates = params.beta.clone();
    estimates.push(params.sigma);
    if opts.lambda == LambdaMode::Free {
        names.push("lambda".into());
        estimates.push(params.lambda);
    }
    let result = FitResult::new(names, estimates, std_errors, -f, n, iterations, converged, data.n_obs(), trace);
    Ok(PglgFit { params, result })
}
