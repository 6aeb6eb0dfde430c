mod common;

use glgmix::mnb::{self, MnbFitOptions, MnbParams};
use glgmix::pglg::{self, LambdaMode, PglgFitOptions, PglgParams};
use glgmix::quadrature::{gauss_hermite, DEFAULT_ORDER};
use glgmix::simulate::{simulate_mnb, simulate_pglg, SimDesign};
use glgmix::Dataset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use common::*;

fn reversed(d: &Dataset) -> Dataset {
    let mut clusters = d.clusters.clone();
    clusters.reverse();
    Dataset::new(clusters, d.column_names.clone()).unwrap()
}

fn seizure_like() -> PglgParams {
    PglgParams::new(vec![0.5, 0.48], 0.6, -1.2).unwrap()
}

#[test]
fn recovers_skewed_random_effect() {
    let truth = seizure_like();
    let d = simulate_pglg(&normal_design(500, 5, 2), &truth).unwrap();
    let f = pglg::fit(&d, None, &PglgFitOptions::default()).unwrap();
    assert!(f.result.converged);
    let se = f.result.std_errors.clone().unwrap();
    let target = [0.5, 0.48, 0.6, -1.2];
    for ((e, s), t) in f.result.estimates.iter().zip(&se).zip(target) {
        assert!((e - t).abs() <= 3.0 * s, "{e} ± {s} vs {t}");
    }
    assert_eq!(f.result.aic, -2.0 * f.result.loglik + 2.0 * 4.0);
}

#[test]
fn normal_fit_is_nested() {
    let d = simulate_pglg(&normal_design(200, 4, 8), &seizure_like()).unwrap();
    let free = pglg::fit(&d, None, &PglgFitOptions::default()).unwrap();
    let opts = PglgFitOptions { lambda: LambdaMode::Fixed(0.0), ..Default::default() };
    let normal = pglg::fit(&d, None, &opts).unwrap();
    assert!(normal.result.loglik <= free.result.loglik + 1e-6);
    assert_eq!(normal.result.n_free, 3);
    assert!(normal.result.aic - free.result.aic > -2.0);
}

#[test]
fn tied_fit_reproduces_mnb() {
    let truth = MnbParams::new(vec![1.0, 0.35], 4.0).unwrap();
    let d = simulate_mnb(&normal_design(200, 3, 14), &truth).unwrap();
    let m = mnb::fit(&d, None, &MnbFitOptions::default()).unwrap();
    let opts = PglgFitOptions { lambda: LambdaMode::TiedToSigma, ..Default::default() };
    let t = pglg::fit(&d, None, &opts).unwrap();
    assert!(t.result.converged);
    for (a, b) in m.params.beta.iter().zip(&t.params.beta) {
        assert!((a - b).abs() < 1e-3, "{a} vs {b}");
    }
    let phi = t.params.sigma.powi(-2);
    assert!((phi - m.params.phi).abs() < 1e-3, "{phi} vs {}", m.params.phi);
}

#[test]
fn likelihood_and_fit_ignore_cluster_order() {
    let d = simulate_pglg(&normal_design(150, 3, 5), &seizure_like()).unwrap();
    let r = reversed(&d);
    let rule = gauss_hermite(DEFAULT_ORDER).unwrap();
    let p = seizure_like();
    let a = pglg::log_likelihood(&d, &p, &rule).unwrap();
    let b = pglg::log_likelihood(&r, &p, &rule).unwrap();
    assert!((a - b).abs() <= 1e-12 * a.abs(), "{a} vs {b}");

    let fa = pglg::fit(&d, None, &PglgFitOptions::default()).unwrap();
    let fb = pglg::fit(&r, None, &PglgFitOptions::default()).unwrap();
    for (x, y) in fa.result.estimates.iter().zip(&fb.result.estimates) {
        assert!((x - y).abs() < 1e-6 * x.abs().max(1.0), "{x} vs {y}");
    }
}

#[test]
fn truth_beats_perturbation_on_average() {
    let truth = seizure_like();
    let rule = gauss_hermite(DEFAULT_ORDER).unwrap();
    let gaps: Vec<f64> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let d = simulate_pglg(&normal_design(50, 4, 300 + seed), &truth).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let off = PglgParams::new(
                vec![0.5 + rng.random_range(-0.3..0.3), 0.48 + rng.random_range(-0.3..0.3)],
                0.6 * rng.random_range(0.6..1.6),
                -1.2 + rng.random_range(-0.8..0.8),
            )
            .unwrap();
            pglg::log_likelihood(&d, &truth, &rule).unwrap() - pglg::log_likelihood(&d, &off, &rule).unwrap()
        })
        .collect();
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    assert!(mean > 0.0, "{gaps:?}");
}

#[test]
fn quadrature_order_has_converged() {
    let d = simulate_pglg(&normal_design(100, 5, 1), &seizure_like()).unwrap();
    for p in [seizure_like(), PglgParams::new(vec![0.5, 0.48], 1.5, 2.0).unwrap()] {
        let coarse = pglg::log_likelihood(&d, &p, &gauss_hermite(DEFAULT_ORDER / 2).unwrap()).unwrap();
        let fine = pglg::log_likelihood(&d, &p, &gauss_hermite(DEFAULT_ORDER).unwrap()).unwrap();
        assert!((coarse - fine).abs() < 1e-6, "{coarse} vs {fine}");
    }
}

#[test]
fn simulated_moments_match_marginal_moments() {
    let p = PglgParams::new(vec![0.3], 0.5, 0.0).unwrap();
    let d = simulate_pglg(&SimDesign::new(100_000, 2, 41), &p).unwrap();
    let theory = pglg::marginal_moments(&d.clusters[0], &p).unwrap();
    let a: Vec<f64> = d.clusters.iter().map(|c| c.y[0] as f64).collect();
    let b: Vec<f64> = d.clusters.iter().map(|c| c.y[1] as f64).collect();
    let m = pair_moments(&a, &b);
    assert!(within_se(m.mean, theory.means[0], 3.0), "{:?} vs {}", m.mean, theory.means[0]);
    assert!(within_se(m.var, theory.variances[0], 3.0), "{:?} vs {}", m.var, theory.variances[0]);
    assert!(within_se(m.cov, theory.covariance[(0, 1)], 3.0), "{:?} vs {}", m.cov, theory.covariance[(0, 1)]);
}

#[test]
fn degenerate_prior_predicts_zero() {
    let d = simulate_pglg(&normal_design(20, 3, 9), &seizure_like()).unwrap();
    let p = PglgParams::new(vec![0.5, 0.48], 1e-8, 0.0).unwrap();
    let pred = pglg::predict_random_effects(&d, &p, &gauss_hermite(DEFAULT_ORDER).unwrap()).unwrap();
    assert_eq!(pred.len(), 20);
    assert!(pred.iter().all(|(_, b)| b.abs() < 1e-6));
}
