//! Gauss–Hermite rules and log-domain integration of unimodal integrands.
//!
//! The marginal likelihood of a random-intercept model is a one-dimensional
//! integral over the random effect. [`log_integrate_adaptive`] centres a
//! Gauss–Hermite rule on the mode of the log-integrand and stretches it by the
//! local curvature, so a Gaussian-shaped integrand is integrated exactly and
//! mildly skewed ones converge quickly in the rule order.

use crate::error::{Error, Result};

/// Default Gauss–Hermite order used by the likelihood code.
pub const DEFAULT_ORDER: usize = 100;

const MAX_ORDER: usize = 200;
const MODE_MAX_ITER: usize = 200;

/// Gauss–Hermite rule for the weight e^{−x²}.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
}

impl QuadratureRule {
    /// Nodes, strictly increasing and symmetric about zero.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// ln of each weight, exact even where the weight itself would underflow.
    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Abscissae in the original variable and their log-weights after
    /// recentring: ∫ e^{g(b)} db ≈ Σ exp(log_wᵢ + g(bᵢ)).
    pub fn adapted_points(&self, centre: &Recentring) -> impl Iterator<Item = (f64, f64)> + '_ {
        let stretch = std::f64::consts::SQRT_2 * centre.scale;
        let ln_stretch = stretch.ln();
        let mode = centre.mode;
        self.nodes
            .iter()
            .zip(&self.log_weights)
            .map(move |(&x, &lw)| (mode + stretch * x, lw + x * x + ln_stretch))
    }

    /// log ∫ exp(g(b)) db using a recentring found beforehand.
    pub fn log_integrate_at<F: Fn(f64) -> f64>(&self, g: F, centre: &Recentring) -> f64 {
        log_sum_exp(self.adapted_points(centre).map(|(b, lw)| lw + finite_or_neg_inf(g(b))))
    }
}

/// Gauss–Hermite rule of the given order (1 ≤ order ≤ 200).
///
/// Eigenvalues of the symmetric Jacobi matrix give starting roots, which are
/// then polished by Newton iteration on the orthonormal Hermite recurrence;
/// weights are 2 / h′ₙ(x)².
pub fn gauss_hermite(order: usize) -> Result<QuadratureRule> {
    if order == 0 || order > MAX_ORDER {
        return Err(Error::QuadratureOrder(order));
    }
    let n = order;
    let nf = n as f64;
    let jacobi = nalgebra::DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let mut guesses: Vec<f64> = jacobi.symmetric_eigenvalues().iter().copied().collect();
    guesses.sort_by(|a, b| b.total_cmp(a));

    let half = n.div_ceil(2);
    let mut roots = vec![0.0; n];
    let mut derivs = vec![0.0; n];
    for i in 0..half {
        let mut z = guesses[i];
        for _ in 0..20 {
            let (p1, p2) = hermite_orthonormal(n, z);
            let pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        if n % 2 == 1 && i == half - 1 {
            z = 0.0;
        }
        let (_, p2) = hermite_orthonormal(n, z);
        let pp = (2.0 * nf).sqrt() * p2;
        roots[i] = z;
        derivs[i] = pp;
        roots[n - 1 - i] = -z;
        derivs[n - 1 - i] = pp;
    }
    roots.reverse();
    derivs.reverse();
    let log_weights: Vec<f64> = derivs.iter().map(|d| 2f64.ln() - 2.0 * d.abs().ln()).collect();
    let weights = log_weights.iter().map(|lw| lw.exp()).collect();
    Ok(QuadratureRule {
        nodes: roots,
        weights,
        log_weights,
    })
}

// Returns (hₙ(z), hₙ₋₁(z)) of the orthonormal Hermite polynomials.
fn hermite_orthonormal(n: usize, z: f64) -> (f64, f64) {
    let mut p1 = std::f64::consts::PI.powf(-0.25);
    let mut p2 = 0.0;
    for j in 0..n {
        let jf = j as f64;
        let p3 = p2;
        p2 = p1;
        p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
    }
    (p1, p2)
}

/// Location and spread used to stretch a Gauss–Hermite rule over a
/// log-integrand: `mode` is its maximiser and `scale` = (−g″(mode))^{−1/2}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Recentring {
    pub mode: f64,
    pub scale: f64,
}

fn finite_or_neg_inf(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// Σ vᵢ with Neumaier's compensation, in iteration order.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut carry = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

/// Numerically stable log Σ exp(vᵢ); −∞ for an empty or all −∞ input.
pub fn log_sum_exp<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let values: Vec<f64> = values.into_iter().collect();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

fn fd_step(b: f64, scale: f64) -> f64 {
    (1e-4 * b.abs().max(1.0)).min(1e-3 * scale)
}

// Central first and second differences, shrinking the step when the
// integrand is not finite at the probe points.
fn central_differences<F: Fn(f64) -> f64>(g: &F, b: f64, gb: f64, mut h: f64) -> Option<(f64, f64, f64)> {
    for _ in 0..20 {
        let up = finite_or_neg_inf(g(b + h));
        let down = finite_or_neg_inf(g(b - h));
        if up.is_finite() && down.is_finite() {
            let d1 = (up - down) / (2.0 * h);
            let d2 = (up - 2.0 * gb + down) / (h * h);
            return Some((d1, d2, h));
        }
        h *= 0.1;
    }
    None
}

/// Locate the mode of `g` by safeguarded Newton iteration from `init` and
/// measure the curvature there by central differences.
pub fn recentre<F: Fn(f64) -> f64>(g: &F, init: f64) -> Result<Recentring> {
    let mut b = init;
    let mut gb = finite_or_neg_inf(g(b));
    if !gb.is_finite() {
        return Err(Error::ModeSearch { iterations: 0, last: b });
    }
    let mut scale: f64 = 1.0;
    for iter in 0..MODE_MAX_ITER {
        let Some((d1, d2, _)) = central_differences(g, b, gb, fd_step(b, scale)) else {
            return Err(Error::ModeSearch { iterations: iter, last: b });
        };
        let step = if d2 < 0.0 {
            scale = (-1.0 / d2).sqrt();
            (-d1 / d2).clamp(-10.0, 10.0)
        } else if d1 != 0.0 {
            d1.signum() * scale.max(1e-3)
        } else {
            return Err(Error::ModeSearch { iterations: iter, last: b });
        };
        if step.abs() <= 1e-9 * scale && d2 < 0.0 {
            return finish_recentring(g, b, gb, scale, iter);
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let nb = b + t * step;
            let ng = finite_or_neg_inf(g(nb));
            if ng >= gb - 1e-13 * (1.0 + gb.abs()) {
                b = nb;
                gb = ng;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // No uphill progress possible along the Newton direction; accept
            // the current point if curvature is usable.
            if d2 < 0.0 {
                return finish_recentring(g, b, gb, scale, iter);
            }
            return Err(Error::ModeSearch { iterations: iter, last: b });
        }
        if (t * step).abs() <= 1e-9 * scale && d2 < 0.0 {
            return finish_recentring(g, b, gb, scale, iter);
        }
    }
    Err(Error::ModeSearch {
        iterations: MODE_MAX_ITER,
        last: b,
    })
}

fn finish_recentring<F: Fn(f64) -> f64>(
    g: &F,
    b: f64,
    gb: f64,
    mut scale: f64,
    iter: usize,
) -> Result<Recentring> {
    // Refine the curvature until the difference step is small relative to
    // the spread it measures.
    for _ in 0..5 {
        let h = fd_step(b, scale);
        let Some((_, d2, _)) = central_differences(g, b, gb, h) else {
            break;
        };
        if d2 >= 0.0 || !d2.is_finite() {
            return Err(Error::ModeSearch { iterations: iter, last: b });
        }
        let fresh = (-1.0 / d2).sqrt();
        let stable = (fresh - scale).abs() <= 1e-6 * scale;
        scale = fresh;
        if stable || h <= 1e-3 * scale {
            break;
        }
    }
    Ok(Recentring { mode: b, scale })
}

/// log ∫ exp(g(b)) db by adaptive (mode-recentred) Gauss–Hermite quadrature.
pub fn log_integrate_adaptive<F: Fn(f64) -> f64>(g: F, rule: &QuadratureRule, init: f64) -> Result<f64> {
    let centre = recentre(&g, init)?;
    Ok(rule.log_integrate_at(&g, &centre))
}

// 15-point Kronrod extension of the 7-point Gauss rule on [−1, 1].
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for k in 0..7 {
        let x = h * XGK[k];
        let s = f(c - x) + f(c + x);
        kron += WGK[k] * s;
        if k % 2 == 1 {
            gauss += WG[k / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Adaptive Gauss–Kronrod (7/15) integration of a smooth function over a
/// finite interval, bisecting until the error estimate meets `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    fn recurse<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
        let (val, err) = gk15(f, a, b);
        if err <= tol.max(1e-15 * val.abs()) || depth == 0 {
            return val;
        }
        let m = 0.5 * (a + b);
        recurse(f, a, m, 0.5 * tol, depth - 1) + recurse(f, m, b, 0.5 * tol, depth - 1)
    }
    // start from equal panels so narrow features are not stepped over
    const PANELS: usize = 16;
    let h = (b - a) / PANELS as f64;
    (0..PANELS)
        .map(|k| {
            let lo = a + h * k as f64;
            let hi = if k + 1 == PANELS { b } else { lo + h };
            recurse(&f, lo, hi, tol / PANELS as f64, 40)
        })
        .sum()
}
