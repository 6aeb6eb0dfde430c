mod common;

use glgmix::diagnostics::{compare_aic, qq_points, simulated_envelope, ResidualKind};
use glgmix::mnb::{self, MnbFitOptions, MnbParams};
use glgmix::pglg::{self, LambdaMode, PglgFitOptions, PglgParams};
use glgmix::simulate::{simulate_mnb, simulate_pglg};

use common::*;

fn fitted(seed: u64) -> (glgmix::Dataset, MnbParams) {
    let truth = MnbParams::new(vec![1.1, 0.3], 3.0).unwrap();
    let d = simulate_mnb(&normal_design(100, 3, seed), &truth).unwrap();
    let f = mnb::fit(&d, None, &MnbFitOptions::default()).unwrap();
    assert!(f.result.converged);
    (d, f.params)
}

#[test]
fn envelope_is_calibrated() {
    let level = 0.9;
    let mut inside = 0.0;
    let mut points = 0.0;
    for seed in 0..4 {
        let (d, p) = fitted(seed);
        let env = simulated_envelope(&d, &p, ResidualKind::Pearson, 99, level, 50 + seed).unwrap();
        assert!(env.rows.iter().all(|r| r.lower <= r.median && r.median <= r.upper));
        inside += env.inside_fraction() * env.rows.len() as f64;
        points += env.rows.len() as f64;
    }
    let fraction = inside / points;
    let se = (level * (1.0 - level) / points).sqrt();
    assert!((fraction - level).abs() < 3.0 * se, "{fraction} inside, se {se}");
}

#[test]
fn full_level_band_is_min_max() {
    let (d, p) = fitted(9);
    let wide = simulated_envelope(&d, &p, ResidualKind::Pearson, 19, 1.0, 3).unwrap();
    let narrow = simulated_envelope(&d, &p, ResidualKind::Pearson, 19, 0.5, 3).unwrap();
    assert_eq!(wide.replicates_used, 19);
    for (w, n) in wide.rows.iter().zip(&narrow.rows) {
        assert!(w.lower <= n.lower && n.upper <= w.upper);
        assert_eq!(w.median, n.median);
    }
}

#[test]
fn envelope_is_deterministic_across_thread_counts() {
    let (d, p) = fitted(2);
    let many = simulated_envelope(&d, &p, ResidualKind::Pearson, 25, 0.95, 8).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let one = pool.install(|| simulated_envelope(&d, &p, ResidualKind::Pearson, 25, 0.95, 8).unwrap());
    assert_eq!(many, one);
    let other = simulated_envelope(&d, &p, ResidualKind::Pearson, 25, 0.95, 9).unwrap();
    assert_ne!(many, other);
}

#[test]
fn envelope_rejects_bad_requests() {
    let (d, p) = fitted(1);
    assert!(simulated_envelope(&d, &p, ResidualKind::Pearson, 18, 0.9, 0).is_err());
    assert!(simulated_envelope(&d, &p, ResidualKind::Pearson, 19, 0.0, 0).is_err());
    assert!(simulated_envelope(&d, &p, ResidualKind::Pearson, 19, 1.5, 0).is_err());
}

#[test]
fn envelope_outputs() {
    let (d, p) = fitted(4);
    let env = simulated_envelope(&d, &p, ResidualKind::Pearson, 19, 0.9, 1).unwrap();
    let mut csv = Vec::new();
    env.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().next(), Some("rank,observed,lower,median,upper"));
    assert_eq!(text.lines().count(), d.n_obs() + 1);
    let svg = env.to_svg("Pearson residuals");
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
}

#[test]
fn qq_of_fitted_residuals_is_sorted() {
    let (d, p) = fitted(5);
    let r = mnb::residuals(&d, &p).unwrap().pearson();
    let pts = qq_points(&r).unwrap();
    assert_eq!(pts.len(), r.len());
    assert!(pts.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 <= w[1].1));
}

#[test]
fn aic_table_orders_and_nests() {
    let truth = PglgParams::new(vec![0.5, 0.48], 0.6, -1.2).unwrap();
    let d = simulate_pglg(&normal_design(200, 5, 3), &truth).unwrap();
    let free = pglg::fit(&d, None, &PglgFitOptions::default()).unwrap();
    let normal = pglg::fit(&d, None, &PglgFitOptions { lambda: LambdaMode::Fixed(0.0), ..Default::default() }).unwrap();
    let table = compare_aic(&[("normal".into(), normal.result.clone()), ("glg".into(), free.result.clone())]).unwrap();
    assert_eq!(table[0].delta, 0.0);
    assert!(table.windows(2).all(|w| w[0].aic <= w[1].aic));
    let glg_row = table.iter().find(|r| r.model == "glg").unwrap();
    let normal_row = table.iter().find(|r| r.model == "normal").unwrap();
    assert!(normal_row.aic - glg_row.aic > -2.0);

    let same = compare_aic(&[("a".into(), free.result.clone()), ("b".into(), free.result)]).unwrap();
    assert!(same.iter().all(|r| r.delta == 0.0));
}
