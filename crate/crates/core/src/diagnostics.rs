//! Normal probability plots with simulated envelopes, AIC tables and GLG
//! density curves.

use std::fmt::Write as _;
use std::io::Write;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fit::FitResult;
use crate::glg::{GlgDensity, GlgParams};
use crate::mnb::{self, MnbFitOptions, MnbParams};
use crate::simulate::resample_mnb;
use crate::special::normal_quantile;

/// Plotting position of the k-th of n order statistics (1-based).
pub fn plotting_position(k: usize, n: usize) -> f64 {
    (k as f64 - 0.375) / (n as f64 + 0.25)
}

/// (Φ⁻¹((k − 3/8)/(n + 1/4)), k-th smallest residual) for k = 1..n.
pub fn qq_points(residuals: &[f64]) -> Result<Vec<(f64, f64)>> {
    if residuals.len() < 3 {
        return Err(Error::Invalid("a normal probability plot needs at least 3 residuals".into()));
    }
    if residuals.iter().any(|r| !r.is_finite()) {
        return Err(Error::Invalid("residuals must be finite".into()));
    }
    let mut sorted = residuals.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(i, r)| (normal_quantile(plotting_position(i + 1, n)), r))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualKind {
    Deviance,
    Pearson,
}

impl std::str::FromStr for ResidualKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deviance" => Ok(ResidualKind::Deviance),
            "pearson" => Ok(ResidualKind::Pearson),
            other => Err(Error::Invalid(format!("unknown residual kind '{other}'"))),
        }
    }
}

/// Residuals of the requested kind in dataset order, or `None` when a
/// deviance residual is undefined (negative component).
pub fn mnb_residuals(data: &Dataset, fitted: &MnbParams, kind: ResidualKind) -> Result<Option<Vec<f64>>> {
    let report = mnb::residual_report(data, fitted)?;
    Ok(match kind {
        ResidualKind::Pearson => Some(report.pearson()),
        ResidualKind::Deviance => report.deviance_residuals(),
    })
}

/// Sample quantile with linear interpolation between order statistics
/// (Hyndman–Fan type 7). `sorted` must be ascending and non-empty.
pub fn quantile_type7(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeRow {
    pub rank: usize,
    pub observed: f64,
    pub lower: f64,
    pub median: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub rows: Vec<EnvelopeRow>,
    pub kind: ResidualKind,
    pub level: f64,
    pub replicates_used: usize,
    pub replicates_dropped: usize,
}

impl Envelope {
    /// Observed points falling inside [lower, upper].
    pub fn inside_fraction(&self) -> f64 {
        let inside = self.rows.iter().filter(|r| r.lower <= r.observed && r.observed <= r.upper).count();
        inside as f64 / self.rows.len() as f64
    }

    /// Writes `rank,observed,lower,median,upper`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "rank,observed,lower,median,upper")?;
        for r in &self.rows {
            writeln!(out, "{},{},{},{},{}", r.rank, r.observed, r.lower, r.median, r.upper)?;
        }
        Ok(())
    }

    /// Self-contained SVG of the normal probability plot with its band.
    pub fn to_svg(&self, title: &str) -> String {
        let n = self.rows.len();
        let xs: Vec<f64> = (1..=n).map(|k| normal_quantile(plotting_position(k, n))).collect();
        let ys = self.rows.iter().flat_map(|r| [r.observed, r.lower, r.upper]);
        let (ymin, ymax) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        let (xmin, xmax) = (xs[0], xs[n - 1]);
        let (w, h, pad) = (640.0, 480.0, 50.0);
        let sx = |x: f64| pad + (x - xmin) / (xmax - xmin).max(1e-12) * (w - 2.0 * pad);
        let sy = |y: f64| h - pad - (y - ymin) / (ymax - ymin).max(1e-12) * (h - 2.0 * pad);
        let polyline = |vals: &mut dyn Iterator<Item = f64>, style: &str| {
            let pts: Vec<String> = xs.iter().zip(vals).map(|(&x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            format!("<polyline fill=\"none\" {style} points=\"{}\"/>\n", pts.join(" "))
        };
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
        );
        let _ = writeln!(svg, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">{}</text>",
            w / 2.0,
            escape(title)
        );
        let _ = writeln!(
            svg,
            "<rect x=\"{pad}\" y=\"{pad}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\"/>",
            w - 2.0 * pad,
            h - 2.0 * pad
        );
        svg.push_str(&polyline(&mut self.rows.iter().map(|r| r.lower), "stroke=\"#333\""));
        svg.push_str(&polyline(&mut self.rows.iter().map(|r| r.upper), "stroke=\"#333\""));
        svg.push_str(&polyline(
            &mut self.rows.iter().map(|r| r.median),
            "stroke=\"#888\" stroke-dasharray=\"4 3\"",
        ));
        for (x, r) in xs.iter().zip(&self.rows) {
            let _ = writeln!(svg, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"#1f4e9c\"/>", sx(*x), sy(r.observed));
        }
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">normal quantile [{xmin:.2}, {xmax:.2}]</text>",
            w / 2.0,
            h - 15.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"15\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 15 {})\">residual [{ymin:.2}, {ymax:.2}]</text>",
            h / 2.0,
            h / 2.0
        );
        svg.push_str("</svg>\n");
        svg
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Simulated envelope for the ordered residuals of an MNB fit.
///
/// Draws `replicates` datasets from the fitted model on the same design,
/// refits each starting from `fitted`, and takes per-rank type-7 quantiles
/// at (1 − level)/2, 1/2 and (1 + level)/2 of the sorted replicate
/// residuals. Replicates whose refit does not converge, or whose deviance
/// residuals are undefined, are dropped; more than 20% dropped is an error.
pub fn simulated_envelope(
    data: &Dataset,
    fitted: &MnbParams,
    kind: ResidualKind,
    replicates: usize,
    level: f64,
    seed: u64,
) -> Result<Envelope> {
    if replicates < 19 {
        return Err(Error::Invalid(format!("an envelope needs at least 19 replicates, got {replicates}")));
    }
    if !(level > 0.0 && level <= 1.0) {
        return Err(Error::Invalid(format!("envelope level must be in (0, 1], got {level}")));
    }
    let mut observed = mnb_residuals(data, fitted, kind)?.ok_or_else(|| {
        Error::Invalid("some deviance components are negative, so deviance residuals are undefined".into())
    })?;
    observed.sort_by(f64::total_cmp);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..replicates).map(|_| rng.random()).collect();
    let opts = MnbFitOptions::default();
    let sims: Vec<Result<Option<Vec<f64>>>> = seeds
        .par_iter()
        .map(|&s| {
            let sim = resample_mnb(data, fitted, s)?;
            let refit = match mnb::fit(&sim, Some(fitted), &opts) {
                Ok(f) if f.result.converged => f,
                _ => return Ok(None),
            };
            let mut res = match mnb_residuals(&sim, &refit.params, kind) {
                Ok(Some(r)) => r,
                _ => return Ok(None),
            };
            res.sort_by(f64::total_cmp);
            Ok(Some(res))
        })
        .collect();
    let mut kept = Vec::with_capacity(replicates);
    for (k, s) in sims.into_iter().enumerate() {
        match s? {
            Some(r) => kept.push(r),
            None => warn!("envelope replicate {} dropped", k + 1),
        }
    }
    let dropped = replicates - kept.len();
    if dropped * 5 > replicates {
        return Err(Error::Invalid(format!(
            "{dropped} of {replicates} envelope replicates failed (more than 20%)"
        )));
    }
    let lo_p = (1.0 - level) / 2.0;
    let hi_p = (1.0 + level) / 2.0;
    let rows = (0..observed.len())
        .map(|i| {
            let mut at_rank: Vec<f64> = kept.iter().map(|r| r[i]).collect();
            at_rank.sort_by(f64::total_cmp);
            EnvelopeRow {
                rank: i + 1,
                observed: observed[i],
                lower: quantile_type7(&at_rank, lo_p),
                median: quantile_type7(&at_rank, 0.5),
                upper: quantile_type7(&at_rank, hi_p),
            }
        })
        .collect();
    Ok(Envelope {
        rows,
        kind,
        level,
        replicates_used: kept.len(),
        replicates_dropped: dropped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AicRow {
    pub model: String,
    pub aic: f64,
    pub delta: f64,
    pub loglik: f64,
    pub n_free: usize,
}

/// Ranks fits by AIC (ascending) with the difference to the best.
pub fn compare_aic(fits: &[(String, FitResult)]) -> Result<Vec<AicRow>> {
    if fits.len() < 2 {
        return Err(Error::Invalid("AIC comparison needs at least two fits".into()));
    }
    let n_obs = fits[0].1.n_obs;
    if fits.iter().any(|(_, f)| f.n_obs != n_obs) {
        return Err(Error::Invalid("fits were made on datasets of different sizes".into()));
    }
    let mut rows: Vec<AicRow> = fits
        .iter()
        .map(|(name, f)| AicRow {
            model: name.clone(),
            aic: f.aic,
            delta: 0.0,
            loglik: f.loglik,
            n_free: f.n_free,
        })
        .collect();
    rows.sort_by(|a, b| a.aic.total_cmp(&b.aic));
    let best = rows[0].aic;
    for r in &mut rows {
        r.delta = r.aic - best;
    }
    Ok(rows)
}

/// Grid covering all but about 1e−7 of the GLG(μ, σ, λ) mass; the long
/// tail (left for λ > 0, right for λ < 0) decays like exp(−|z|/|λ|).
pub fn curve_grid(p: &GlgParams, points: usize) -> Vec<f64> {
    let left = 8.0 + 18.0 * p.lambda.max(0.0);
    let right = 8.0 + 18.0 * (-p.lambda).max(0.0);
    let (lo, hi) = (p.mu - left * p.sigma, p.mu + right * p.sigma);
    let n = points.max(2);
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

/// (y, density) pairs of GLG(μ, σ, λ) over `grid`.
pub fn glg_curve(p: &GlgParams, grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    let d = GlgDensity::new(*p)?;
    Ok(grid.iter().map(|&y| (y, d.log_pdf(y).exp())).collect())
}
