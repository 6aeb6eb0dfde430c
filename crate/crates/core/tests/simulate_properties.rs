mod common;

use std::collections::BTreeMap;

use glgmix::data::read_csv;
use glgmix::mnb::{self, MnbParams};
use glgmix::pglg::PglgParams;
use glgmix::simulate::{simulate_mnb, simulate_pglg, Recipe, SimDesign};
use glgmix::Dataset;

use common::*;

fn pairs(d: &Dataset) -> (Vec<f64>, Vec<f64>) {
    d.clusters.iter().map(|c| (c.y[0] as f64, c.y[1] as f64)).unzip()
}

#[test]
fn tiny_sigma_is_poisson() {
    let d = simulate_pglg(&SimDesign::new(50_000, 2, 1), &PglgParams::new(vec![0.5], 1e-8, 0.0).unwrap()).unwrap();
    let (a, b) = pairs(&d);
    assert!(within_se(pair_moments(&a, &b).ratio, 1.0, 3.0));
}

#[test]
fn unit_glg_doubles_dispersion() {
    let d = simulate_pglg(&SimDesign::new(100_000, 2, 2), &PglgParams::new(vec![0.0], 1.0, 1.0).unwrap()).unwrap();
    let (a, b) = pairs(&d);
    let m = pair_moments(&a, &b);
    assert!(within_se(m.ratio, 2.0, 3.0), "{:?}", m.ratio);
}

#[test]
fn unit_phi_correlation_is_half() {
    let d = simulate_mnb(&SimDesign::new(100_000, 2, 3), &MnbParams::new(vec![0.0], 1.0).unwrap()).unwrap();
    let (a, b) = pairs(&d);
    let m = pair_moments(&a, &b);
    assert!(within_se(m.corr, 0.5, 3.0), "{:?}", m.corr);
}

#[test]
fn huge_phi_is_uncorrelated() {
    let d = simulate_mnb(&SimDesign::new(100_000, 2, 4), &MnbParams::new(vec![0.0], 1e6).unwrap()).unwrap();
    let (a, b) = pairs(&d);
    assert!(within_se(pair_moments(&a, &b).corr, 0.0, 3.0));
}

#[test]
fn correlation_matches_formula() {
    let design = SimDesign::new(100_000, 2, 5).covariate("second", Recipe::Within { values: vec![0.0, 1.0] });
    let p = MnbParams::new(vec![0.7f64.ln(), (1.2f64 / 0.7).ln()], 1.5).unwrap();
    let (a, b) = pairs(&simulate_mnb(&design, &p).unwrap());
    let target = mnb::intraclass_corr(0.7, 1.2, 1.5).unwrap();
    assert!((target - 0.3761).abs() < 1e-4);
    assert!(within_se(pair_moments(&a, &b).corr, target, 3.0));
}

/// Pearson chi-square for a two-sample homogeneity test on pooled bins.
fn two_sample_chi_square(a: &[u64], b: &[u64]) -> (f64, usize) {
    let mut counts: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
    for &v in a {
        counts.entry(v).or_default().0 += 1.0;
    }
    for &v in b {
        counts.entry(v).or_default().1 += 1.0;
    }
    // merge sparse tail bins until each has an expected count of at least 5
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut bins = Vec::new();
    let mut acc = (0.0, 0.0);
    for (_, c) in counts {
        acc = (acc.0 + c.0, acc.1 + c.1);
        if (acc.0 + acc.1) * na.min(nb) / (na + nb) >= 5.0 {
            bins.push(acc);
            acc = (0.0, 0.0);
        }
    }
    if let Some(last) = bins.last_mut() {
        *last = (last.0 + acc.0, last.1 + acc.1);
    }
    let stat = bins
        .iter()
        .map(|&(x, y)| {
            let total = x + y;
            let (ea, eb) = (total * na / (na + nb), total * nb / (na + nb));
            (x - ea).powi(2) / ea + (y - eb).powi(2) / eb
        })
        .sum();
    (stat, bins.len() - 1)
}

#[test]
fn gamma_frailty_equals_glg_frailty() {
    // cluster totals are independent across clusters and carry the joint law
    let design = normal_design(20_000, 3, 6);
    let a: Vec<u64> = simulate_mnb(&design, &MnbParams::new(vec![0.8, 0.3], 4.0).unwrap())
        .unwrap()
        .clusters
        .iter()
        .map(|c| c.total())
        .collect();
    let mut other = design.clone();
    other.seed = 7;
    let b: Vec<u64> = simulate_pglg(&other, &PglgParams::new(vec![0.8, 0.3], 0.5, 0.5).unwrap())
        .unwrap()
        .clusters
        .iter()
        .map(|c| c.total())
        .collect();
    let (stat, df) = two_sample_chi_square(&a, &b);
    // upper 1% points of chi-square by the Wilson–Hilferty approximation
    let k = df as f64;
    let critical = k * (1.0 - 2.0 / (9.0 * k) + 2.326_348 * (2.0 / (9.0 * k)).sqrt()).powi(3);
    assert!(stat < critical, "chi-square {stat} on {df} df, critical {critical}");
}

#[test]
fn simulators_are_pure() {
    let design = brood_design(30, 10);
    let p = MnbParams::new(BROOD_BETA.to_vec(), BROOD_PHI).unwrap();
    assert_eq!(simulate_mnb(&design, &p).unwrap(), simulate_mnb(&design, &p).unwrap());
    let g = PglgParams::new(BROOD_BETA.to_vec(), 0.3, -0.4).unwrap();
    assert_eq!(simulate_pglg(&design, &g).unwrap(), simulate_pglg(&design, &g).unwrap());
}

#[test]
fn written_datasets_read_back() {
    let d = simulate_mnb(&brood_design(25, 11), &MnbParams::new(BROOD_BETA.to_vec(), BROOD_PHI).unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sim.csv");
    d.write_csv_path(&path).unwrap();
    assert_eq!(read_csv(&path, &d.written_spec()).unwrap(), d);
}
