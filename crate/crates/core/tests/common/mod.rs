#![allow(dead_code)]

use std::path::PathBuf;

use glgmix::data::{read_csv, ModelSpec};
use glgmix::simulate::{Level, Recipe, SimDesign};
use glgmix::Dataset;

pub const BROOD_BETA: [f64; 4] = [2.53, -0.004, 0.29, -0.0013];
pub const BROOD_PHI: f64 = 11.6;

/// Five concentrations, three broods per animal centred at day 0.
pub fn brood_design(n: usize, seed: u64) -> SimDesign {
    SimDesign::new(n, 3, seed)
        .covariate("conc", Recipe::ClusterLevels { values: vec![0.0, 80.0, 160.0, 235.0, 310.0] })
        .covariate("brood_day", Recipe::Within { values: vec![-2.0, 0.0, 2.0] })
        .interaction("conc", "brood_day")
}

/// Intercept plus one standard-normal covariate per observation.
pub fn normal_design(n: usize, m: usize, seed: u64) -> SimDesign {
    SimDesign::new(n, m, seed).covariate("x", Recipe::Normal { mean: 0.0, sd: 1.0, level: Level::Observation })
}

pub fn cdubia_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/cdubia.csv")
}

pub fn cdubia_spec() -> ModelSpec {
    ModelSpec::new("count", "animal")
        .covariate("conc")
        .covariate("brood_day")
        .interaction("conc", "brood_day")
}

/// The published C. dubia data, if present in the repository.
pub fn cdubia() -> Option<Dataset> {
    let path = cdubia_path();
    path.exists().then(|| read_csv(&path, &cdubia_spec()).expect("cdubia.csv parses"))
}

/// Estimate and standard error of a statistic from its influence values.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Sample moments of paired draws with influence-function standard errors.
pub struct PairMoments {
    pub mean: (f64, f64),
    pub var: (f64, f64),
    pub cov: (f64, f64),
    pub ratio: (f64, f64),
    pub corr: (f64, f64),
}

pub fn pair_moments(a: &[f64], b: &[f64]) -> PairMoments {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let va = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / n;
    let vb = b.iter().map(|x| (x - mb).powi(2)).sum::<f64>() / n;
    let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
    let corr = cov / (va * vb).sqrt();
    let se = |infl: Vec<f64>| mean_and_se(&infl).1;
    let mean_se = se(a.to_vec());
    let var_se = se(a.iter().map(|x| (x - ma).powi(2)).collect());
    let cov_se = se(a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).collect());
    let ratio_se = se(a.iter().map(|x| ((x - ma).powi(2) - va) / ma - va * (x - ma) / (ma * ma)).collect());
    let corr_se = se(a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let (u, v) = ((x - ma) / va.sqrt(), (y - mb) / vb.sqrt());
            u * v - 0.5 * corr * (u * u + v * v)
        })
        .collect());
    PairMoments {
        mean: (ma, mean_se),
        var: (va, var_se),
        cov: (cov, cov_se),
        ratio: (va / ma, ratio_se),
        corr: (corr, corr_se),
    }
}

/// |estimate − target| within k standard errors.
pub fn within_se(est: (f64, f64), target: f64, k: f64) -> bool {
    (est.0 - target).abs() <= k * est.1
}
