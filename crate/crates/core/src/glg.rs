//! The generalized log-gamma law GLG(μ, σ, λ).
//!
//! For λ ≠ 0 the density is
//!
//! ```text
//! f(y) = c(λ)/σ · exp[ z/λ − λ⁻² exp(λ z) ],   z = (y − μ)/σ,
//! c(λ) = |λ| (λ⁻²)^{λ⁻²} / Γ(λ⁻²),
//! ```
//!
//! and λ = 0 is the normal law N(μ, σ²). Equivalently, with q = λ⁻² and
//! w ~ Gamma(q, 1), the variable μ + (σ/λ)·ln(w/q) is GLG(μ, σ, λ); sampling
//! and the exponential moments below both use that representation.
//!
//! λ = 1 is the (minimum) extreme-value law; λ < 0 skews right, λ > 0 left.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature;
use crate::special::{digamma_minus_ln, ln_gamma_ratio, ln_gamma_stirling_remainder, trigamma, LN_SQRT_2PI};

/// Below this |λ| the normal branch is used.
pub const LAMBDA_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlgParams {
    pub mu: f64,
    pub sigma: f64,
    pub lambda: f64,
}

impl GlgParams {
    pub fn new(mu: f64, sigma: f64, lambda: f64) -> Result<Self> {
        let p = GlgParams { mu, sigma, lambda };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu.is_finite() && self.sigma.is_finite() && self.lambda.is_finite()) {
            return Err(Error::Domain(format!("GLG parameters must be finite: {self:?}")));
        }
        if self.sigma <= 0.0 {
            return Err(Error::Domain(format!("GLG scale must be positive, got {}", self.sigma)));
        }
        Ok(())
    }

    fn is_normal(&self) -> bool {
        self.lambda.abs() < LAMBDA_EPS
    }
}

/// Log-density with its normalising constant computed once.
///
/// The λ ≠ 0 branch is rewritten as
/// `−½ln 2π − δ(q) − ln σ − (e^{λz} − 1 − λz)/λ²`, where δ is the Stirling
/// remainder of ln Γ(q); every term stays O(1) as λ → 0, so the density
/// joins the normal branch continuously.
#[derive(Debug, Clone, Copy)]
pub struct GlgDensity {
    params: GlgParams,
    log_const: f64,
}

impl GlgDensity {
    pub fn new(params: GlgParams) -> Result<Self> {
        params.validate()?;
        let log_const = if params.is_normal() {
            -LN_SQRT_2PI - params.sigma.ln()
        } else {
            let q = 1.0 / (params.lambda * params.lambda);
            -LN_SQRT_2PI - ln_gamma_stirling_remainder(q) - params.sigma.ln()
        };
        Ok(GlgDensity { params, log_const })
    }

    pub fn params(&self) -> GlgParams {
        self.params
    }

    pub fn log_pdf(&self, y: f64) -> f64 {
        let p = &self.params;
        let z = (y - p.mu) / p.sigma;
        if p.is_normal() {
            return self.log_const - 0.5 * z * z;
        }
        let u = p.lambda * z;
        self.log_const - expm1_minus_identity(u) / (p.lambda * p.lambda)
    }

    /// First and second derivatives of `log_pdf` with respect to y.
    pub fn log_pdf_derivatives(&self, y: f64) -> (f64, f64) {
        let p = &self.params;
        let z = (y - p.mu) / p.sigma;
        let s2 = p.sigma * p.sigma;
        if p.is_normal() {
            return (-z / p.sigma, -1.0 / s2);
        }
        let u = p.lambda * z;
        (-u.exp_m1() / (p.lambda * p.sigma), -u.exp() / s2)
    }
}

// e^u − 1 − u without cancellation near zero.
fn expm1_minus_identity(u: f64) -> f64 {
    if u.abs() < 0.1 {
        let mut term = u * u / 2.0;
        let mut sum = term;
        let mut k = 2.0;
        while term.abs() > 1e-18 * sum.abs() {
            k += 1.0;
            term *= u / k;
            sum += term;
        }
        sum
    } else {
        u.exp_m1() - u
    }
}

/// Natural log of the GLG density at `y`.
pub fn log_pdf(y: f64, p: &GlgParams) -> Result<f64> {
    if !y.is_finite() {
        return Err(Error::Domain(format!("log_pdf at non-finite y = {y}")));
    }
    Ok(GlgDensity::new(*p)?.log_pdf(y))
}

pub fn mean(p: &GlgParams) -> Result<f64> {
    p.validate()?;
    if p.is_normal() {
        return Ok(p.mu);
    }
    let q = 1.0 / (p.lambda * p.lambda);
    Ok(p.mu + p.sigma * digamma_minus_ln(q) / p.lambda)
}

pub fn variance(p: &GlgParams) -> Result<f64> {
    p.validate()?;
    if p.is_normal() {
        return Ok(p.sigma * p.sigma);
    }
    let q = 1.0 / (p.lambda * p.lambda);
    Ok(p.sigma * p.sigma * q * trigamma(q))
}

/// E[exp(k·b)] for b ~ GLG(0, σ, λ), k ∈ {1, 2}.
///
/// With s = kσ/λ this is q^{−s} Γ(q + s)/Γ(q), which is finite only when
/// q + s > 0, i.e. kσλ > −1. For λ < 0 that is the condition kσ|λ| < 1;
/// beyond it the moment is infinite and an error is returned.
pub fn exp_moment(p: &GlgParams, k: u32) -> Result<f64> {
    p.validate()?;
    if p.mu != 0.0 {
        return Err(Error::Domain("exp_moment expects a zero position parameter".into()));
    }
    if !(1..=2).contains(&k) {
        return Err(Error::Domain(format!("exp_moment order must be 1 or 2, got {k}")));
    }
    let kf = f64::from(k);
    if p.is_normal() {
        return Ok((0.5 * kf * kf * p.sigma * p.sigma).exp());
    }
    if kf * p.sigma * p.lambda <= -1.0 {
        return Err(Error::MomentDoesNotExist {
            k,
            sigma: p.sigma,
            lambda: p.lambda,
        });
    }
    let q = 1.0 / (p.lambda * p.lambda);
    let s = kf * p.sigma / p.lambda;
    Ok((ln_gamma_ratio(q, s) - s * q.ln()).exp())
}

/// ∫₀^∞ t^{a−1} e^{−t} dt by direct adaptive quadrature (t = eˣ substitution).
///
/// This is the integral form in which the λ < 0 exponential moments are
/// usually written; [`exp_moment`] uses the gamma-function identity instead
/// and this routine exists to check it.
pub fn gamma_integral_quadrature(a: f64) -> f64 {
    assert!(a > 0.0, "gamma integral diverges for a <= 0");
    // integrand in x: exp(a x − eˣ), peak at x = ln a
    let peak_x = a.ln();
    let peak = a * peak_x - a;
    let log_f = |x: f64| a * x - x.exp() - peak;
    let mut lo = peak_x - 1.0;
    while log_f(lo) > -60.0 {
        lo -= 1.0 + (lo - peak_x).abs();
    }
    let mut hi = peak_x + 1.0;
    while log_f(hi) > -60.0 {
        hi += 0.5;
    }
    let v = quadrature::integrate(|x| log_f(x).exp(), lo, hi, 1e-14);
    v * peak.exp()
}

/// Draws `n` i.i.d. GLG variates, deterministic in `seed`.
pub fn sample(p: &GlgParams, seed: u64, n: usize) -> Result<Vec<f64>> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampler = GlgSampler::new(*p)?;
    Ok((0..n).map(|_| sampler.draw(&mut rng)).collect())
}

/// Reusable GLG sampler.
#[derive(Debug, Clone)]
pub struct GlgSampler {
    params: GlgParams,
    gamma: Option<Gamma<f64>>,
}

impl GlgSampler {
    pub fn new(params: GlgParams) -> Result<Self> {
        params.validate()?;
        let gamma = if params.is_normal() {
            None
        } else {
            let q = 1.0 / (params.lambda * params.lambda);
            Some(Gamma::new(q, 1.0).map_err(|e| Error::Domain(format!("gamma sampler: {e}")))?)
        };
        Ok(GlgSampler { params, gamma })
    }

    pub fn draw<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let p = &self.params;
        match &self.gamma {
            None => {
                let z: f64 = StandardNormal.sample(rng);
                p.mu + p.sigma * z
            }
            Some(gamma) => {
                let q = 1.0 / (p.lambda * p.lambda);
                let w = gamma.sample(rng);
                // ln(w/q) written as ln1p to keep precision when q is large
                p.mu + (p.sigma / p.lambda) * ((w - q) / q).ln_1p()
            }
        }
    }
}
