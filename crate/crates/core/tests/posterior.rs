mod common;

use common::{big_phi, c, golden_max, phi, quadrature_posterior, random_operator};
use mpaccess::array::{complex_gaussian, ArrayGeometry};
use mpaccess::solver::{init_params, initial_sparsity, nle_step, posterior, Prior, SolverConfig, ThresholdCurve, VarianceScope};
use mpaccess::{CMat, RealMat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn posterior_matches_quadrature_on_random_draws() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xb0);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let lambda = rng.random_range(0.01..0.99);
        let rho2 = 10f64.powf(rng.random_range(-1.0..1.0));
        let tau2 = 10f64.powf(rng.random_range(-1.5..0.5));
        let r = complex_gaussian(&mut rng, rho2 + tau2) * rng.random_range(0.0..2.0);
        let got = posterior(r, tau2, lambda, rho2);
        let want = quadrature_posterior(r, tau2, lambda, rho2);
        let err = rel(got.eta, want.eta)
            .max((got.mean - want.mean).norm() / want.mean.norm().max(1e-300))
            .max(rel(got.var, want.var));
        worst = worst.max(err);
    }
    assert!(worst < 1e-8, "worst relative error {worst:e}");
}

#[test]
fn posterior_anchor() {
    let p = posterior(c(0.0, 0.0), 1.0, 0.5, 1.0);
    assert!((p.eta - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(p.mean, c(0.0, 0.0));
}

#[test]
fn initial_sparsity_matches_golden_section() {
    let delta: f64 = 0.5;
    for (curve, lead) in [
        (ThresholdCurve::Standard, (|c: f64| 1.0 + c * c) as fn(f64) -> f64),
        (ThresholdCurve::Binomial, |c: f64| (1.0 + c) * (1.0 + c)),
    ] {
        let objective = |x: f64| {
            let m = lead(x) * big_phi(-x) - x * phi(x);
            (1.0 - 2.0 * m / delta) / (1.0 + x * x - 2.0 * m)
        };
        let (_, best) = golden_max(objective, 1e-4, 10.0, 1e-12);
        let want = delta * best;
        let got = initial_sparsity(8, 16, curve);
        // the library searches a 1e-4 grid: error is second order in the step
        assert!((got - want).abs() < 1e-7, "{curve:?}: {got} vs {want}");
    }
    let standard = initial_sparsity(8, 16, ThresholdCurve::Standard);
    assert!(standard > 0.0 && standard < 0.5);
}

#[test]
fn nle_output_is_orthogonal_to_input_error() {
    // J = 256 users x 16 antennas = 4096
    let geom = ArrayGeometry::new(2, 2, 2, 2, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let f = random_operator(&mut rng, &geom, 256, 64);
    assert_eq!(f.j(), 4096);
    let cfg = SolverConfig { variance_scope: VarianceScope::Subcarrier, ..SolverConfig::default() };
    let (_, mut st) = init_params(&CMat::zeros(f.q(), 1), &f, &cfg).unwrap();

    let (lambda, rho2, tau2) = (0.1, 1.0, 0.2);
    let h: Vec<_> = (0..f.j())
        .map(|_| if rng.random_bool(lambda) { complex_gaussian(&mut rng, rho2) } else { c(0.0, 0.0) })
        .collect();
    let r: Vec<_> = h.iter().map(|&x| x + complex_gaussian(&mut rng, tau2)).collect();
    st.r = CMat::from_col_major(f.j(), 1, r.clone()).unwrap();
    st.tau2 = RealMat::filled(1, 1, tau2);
    let prior = Prior { lambda: RealMat::filled(f.j(), 1, lambda), rho2 };
    nle_step(&mut st, &prior);

    let v2 = st.v2.get(0, 0);
    let corr: mpaccess::Complex64 = (0..f.j()).map(|j| (st.u[(j, 0)] - h[j]).conj() * (r[j] - h[j])).sum();
    let corr = corr.norm() / f.j() as f64 / (tau2.sqrt() * v2.sqrt());
    assert!(corr < 0.05, "correlation {corr}");

    // and v² is the actual error of u
    let mse: f64 = (0..f.j()).map(|j| (st.u[(j, 0)] - h[j]).norm_sqr()).sum::<f64>() / f.j() as f64;
    assert!((mse / v2 - 1.0).abs() < 0.1, "mse {mse} vs v2 {v2}");
}
