use glgmix::data::ClusterData;
use glgmix::diagnostics::qq_points;
use glgmix::glg::{log_pdf, GlgParams};
use glgmix::mnb;
use glgmix::pglg::{self, PglgParams};
use glgmix::quadrature::gauss_hermite;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn cluster(y: Vec<u64>, mu: &[f64]) -> ClusterData {
    let x = DMatrix::from_element(y.len(), 1, 1.0);
    ClusterData::new("c", y, x, mu.iter().map(|m| m.ln()).collect()).unwrap()
}

fn counts_and_means() -> impl Strategy<Value = (Vec<u64>, Vec<f64>)> {
    (1usize..5).prop_flat_map(|m| (prop::collection::vec(0u64..25, m), prop::collection::vec(0.05f64..15.0, m)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn glg_mirror_symmetry(y in -6.0f64..6.0, mu in -2.0f64..2.0, sigma in 0.1f64..3.0, lambda in -2.5f64..2.5) {
        let a = log_pdf(y, &GlgParams::new(mu, sigma, lambda).unwrap()).unwrap();
        let b = log_pdf(2.0 * mu - y, &GlgParams::new(mu, sigma, -lambda).unwrap()).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "{} vs {}", a, b);
    }

    #[test]
    fn mnb_pmf_is_a_probability((y, mu) in counts_and_means(), phi in 0.05f64..100.0) {
        let v = mnb::log_pmf_from_means(&y, &mu, phi);
        prop_assert!(v.is_finite() && v <= 0.0);
    }

    #[test]
    fn deviance_components_regroup((y, mu) in counts_and_means(), phi in 0.05f64..100.0) {
        let total = mnb::cluster_deviance(&y, &mu, phi);
        let parts: f64 = mnb::cluster_deviance_components(&y, &mu, phi).iter().sum();
        prop_assert!((total - parts).abs() < 1e-10 * total.abs().max(1.0));
        prop_assert!(total >= -1e-12);
    }

    #[test]
    fn working_weights_are_psd(mu in prop::collection::vec(0.01f64..50.0, 1..6), phi in 0.05f64..100.0) {
        let w = mnb::working_weights(&mu, phi);
        prop_assert!((&w - w.transpose()).amax() == 0.0);
        let scale = w.amax();
        let min = w.symmetric_eigen().eigenvalues.min();
        prop_assert!(min >= -1e-10 * scale, "{}", min);
    }

    #[test]
    fn intraclass_corr_is_a_correlation(a in 0.01f64..50.0, b in 0.01f64..50.0, phi in 0.01f64..1e4) {
        let r = mnb::intraclass_corr(a, b, phi).unwrap();
        prop_assert!(r > 0.0 && r < 1.0);
    }

    #[test]
    fn glg_marginal_is_a_probability(
        y in prop::collection::vec(0u64..20, 1..4),
        eta in -1.0f64..2.5,
        sigma in 0.05f64..2.0,
        lambda in -2.0f64..2.0,
    ) {
        let rule = gauss_hermite(60).unwrap();
        let c = cluster(y.clone(), &vec![eta.exp(); y.len()]);
        let v = pglg::cluster_log_marginal(&c, &PglgParams::new(vec![0.0], sigma, lambda).unwrap(), &rule).unwrap();
        prop_assert!(v.is_finite() && v <= 1e-12, "{}", v);
    }

    #[test]
    fn qq_ignores_input_order(mut r in prop::collection::vec(-5.0f64..5.0, 3..40), seed in any::<u64>()) {
        let a = qq_points(&r).unwrap();
        let n = r.len();
        r.rotate_left((seed % n as u64) as usize);
        r.reverse();
        prop_assert_eq!(a, qq_points(&r).unwrap());
    }
}
