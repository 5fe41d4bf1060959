//! Quick invariant checks runnable from the command line.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::array::{multi_panel_response, ArrayGeometry};
use crate::cmat::{inner, CMat};
use crate::frontend::{assemble_sensing, build_combiner, gen_pilots, ProductKernel, SensingOperator};
use crate::harness::{symbol_latency, DENSE_LIMIT};
use crate::solver::{initial_sparsity, posterior, ThresholdCurve};
use crate::{array::OfdmConfig, Complex64, Result};

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, worst: f64, tol: f64) -> Check {
    Check { name, passed: worst < tol, detail: format!("worst {worst:.3e} (tol {tol:.0e})") }
}

fn random_operator(rng: &mut ChaCha8Rng) -> Result<SensingOperator> {
    let geom = ArrayGeometry::new(
        rng.random_range(1..=3),
        rng.random_range(1..=3),
        rng.random_range(1..=3),
        rng.random_range(1..=2),
        rng.random_range(2..=4),
    )?;
    let k = rng.random_range(2..=40);
    let g = rng.random_range(1..=k.min(8));
    let pilots = gen_pilots(k, g, rng)?;
    let combiners = (0..g).map(|_| build_combiner(&geom, rng)).collect::<Result<Vec<_>>>()?;
    assemble_sensing(pilots, combiners)
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
    (0..n).map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect()
}

fn operator_checks(rng: &mut ChaCha8Rng) -> Result<Vec<Check>> {
    let (mut unitary, mut apply, mut adjoint, mut kernels) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let f = random_operator(rng)?;
        assert!(f.j() * f.q() <= DENSE_LIMIT);
        let dense = f.to_dense();
        let gram = dense.matmul(&dense.adjoint())?;
        for r in 0..gram.rows() {
            for c in 0..gram.cols() {
                let target = if r == c { 1.0 } else { 0.0 };
                unitary = unitary.max((gram[(r, c)] - target).norm());
            }
        }
        let x = random_vec(rng, f.j());
        let y = random_vec(rng, f.q());
        let fx = f.apply(&x);
        let dx = dense.matmul(&CMat::from_col_major(f.j(), 1, x.clone())?)?;
        apply = apply.max(fx.iter().zip(dx.as_slice()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max));
        let fhy = f.apply_adjoint(&y);
        adjoint = adjoint.max((inner(&y, &fx) - inner(&fhy, &x)).norm());
        let other = match f.kernel() {
            ProductKernel::Direct => ProductKernel::Fft,
            ProductKernel::Fft => ProductKernel::Direct,
        };
        let alt = f.clone().with_kernel(other);
        kernels = kernels.max(alt.apply(&x).iter().zip(&fx).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max));
    }
    Ok(vec![
        check("operator rows orthonormal", unitary, 1e-10),
        check("structured apply vs dense", apply, 1e-10),
        check("adjoint identity", adjoint, 1e-10),
        check("direct vs fft kernel", kernels, 1e-10),
    ])
}

fn steering_check(rng: &mut ChaCha8Rng) -> Result<Check> {
    // phase of antenna (h, v) against its position in element spacings
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let geom = ArrayGeometry::new(
            rng.random_range(1..=4),
            rng.random_range(1..=4),
            rng.random_range(1..=3),
            rng.random_range(1..=3),
            rng.random_range(2..=6),
        )?;
        let (mu, nu) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let a = multi_panel_response(mu, nu, &geom);
        let pos = |panel: usize, elem: usize, m: usize| (panel * (m + geom.d - 1) + elem) as f64;
        for nv in 0..geom.n_v() {
            for nh in 0..geom.n_h() {
                let x = pos(nh / geom.m_h, nh % geom.m_h, geom.m_h);
                let z = pos(nv / geom.m_v, nv % geom.m_v, geom.m_v);
                let want = Complex64::from_polar(1.0, x * mu + z * nu);
                worst = worst.max((a[nv * geom.n_h() + nh] - want).norm());
            }
        }
    }
    Ok(check("steering phase vs positions", worst, 1e-9))
}

fn posterior_check() -> Check {
    let p = posterior(Complex64::new(0.0, 0.0), 1.0, 0.5, 1.0);
    let mut worst = (p.eta - 1.0 / 3.0).abs();
    // large |r| pulls the belief to one and the mean to the Wiener estimate
    let r = Complex64::new(30.0, -10.0);
    let p = posterior(r, 0.1, 0.1, 2.0);
    worst = worst.max((p.eta - 1.0).abs()).max((p.mean - r * (2.0 / 2.1)).norm());
    check("posterior anchors", worst, 1e-12)
}

fn sparsity_check() -> Check {
    let lambda = initial_sparsity(64, 256, ThresholdCurve::Standard);
    let ok = lambda > 0.0 && lambda < 0.25;
    Check { name: "initial sparsity in (0, Q/J)", passed: ok, detail: format!("lambda0 = {lambda:.4}") }
}

fn latency_check() -> Check {
    let ofdm = OfdmConfig::new(1e9, 256, 16, 30e9).expect("reference OFDM parameters are valid");
    let worst = [(1, 0.288e-6), (250, 72e-6), (275, 79.2e-6)]
        .iter()
        .map(|&(g, want)| ((symbol_latency(g, &ofdm) - want) / want).abs())
        .fold(0.0, f64::max);
    check("symbol latency", worst, 1e-12)
}

/// Run every check with a fixed seed.
pub fn run_all() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e1f);
    let mut out = Vec::new();
    match operator_checks(&mut rng) {
        Ok(c) => out.extend(c),
        Err(e) => out.push(Check { name: "operator construction", passed: false, detail: e.to_string() }),
    }
    match steering_check(&mut rng) {
        Ok(c) => out.push(c),
        Err(e) => out.push(Check { name: "steering", passed: false, detail: e.to_string() }),
    }
    out.push(posterior_check());
    out.push(sparsity_check());
    out.push(latency_check());
    out
}
