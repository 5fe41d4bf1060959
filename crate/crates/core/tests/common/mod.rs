//! Independent reference computations for the integration tests. Nothing here
//! calls into the library's math; only its data types are shared.

#![allow(dead_code)]

use std::f64::consts::PI;

use mpaccess::array::{complex_gaussian, ArrayGeometry};
use mpaccess::frontend::{assemble_sensing, build_combiner, gen_pilots, SensingOperator};
use mpaccess::{CMat, Complex64};
use nalgebra::DMatrix;
use rand::Rng;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn random_vec<R: Rng>(rng: &mut R, n: usize) -> Vec<Complex64> {
    (0..n).map(|_| complex_gaussian(rng, 1.0)).collect()
}

pub fn random_operator<R: Rng>(rng: &mut R, geom: &ArrayGeometry, k: usize, g: usize) -> SensingOperator {
    let pilots = gen_pilots(k, g, rng).unwrap();
    let combiners = (0..g).map(|_| build_combiner(geom, rng).unwrap()).collect();
    assemble_sensing(pilots, combiners).unwrap()
}

/// Array response by accumulating `x μ + z ν` over physical element
/// positions, counted in half-wavelength units.
pub fn steering_by_position(mu: f64, nu: f64, geom: &ArrayGeometry) -> Vec<Complex64> {
    let position = |panel: usize, elem: usize, m: usize| (panel * (m + geom.d - 1) + elem) as f64;
    let mut out = Vec::new();
    for pv in 0..geom.i_v {
        for ev in 0..geom.m_v {
            for ph in 0..geom.i_h {
                for eh in 0..geom.m_h {
                    let x = position(ph, eh, geom.m_h);
                    let z = position(pv, ev, geom.m_v);
                    out.push(Complex64::from_polar(1.0, x * mu + z * nu));
                }
            }
        }
    }
    out
}

/// `F` entry by entry: row `g N_P + n_p`, column `k N_BS + n` holds
/// `s_k^(g) conj(W^(g)[n, n_p]) / √K`, with the pilot and combiner entries
/// rebuilt from their DFT column indices.
pub fn dense_operator(f: &SensingOperator) -> CMat {
    let geom = f.geometry();
    let (k, n_bs, n_p) = (f.users(), geom.n_bs(), geom.n_p());
    let (n_h, n_v) = (geom.n_h(), geom.n_v());
    let dft = |m: usize, n: usize, size: usize| Complex64::from_polar(1.0, -2.0 * PI * (m * n) as f64 / size as f64);
    let panel = |n: usize| {
        let (h, v) = (n % n_h, n / n_h);
        (v / geom.m_v) * geom.i_h + h / geom.m_h
    };
    let scale = 1.0 / (k as f64).sqrt();
    let amp = 1.0 / (geom.m_bs() as f64).sqrt();
    let mut out = CMat::zeros(f.q(), f.j());
    for g in 0..f.symbols() {
        let pilot_col = f.pilots().columns()[g];
        let comb = f.combiners()[g].dft_columns();
        for user in 0..k {
            let s = dft(user, pilot_col, k);
            for n in 0..n_bs {
                let np = panel(n);
                let col = comb[np];
                let w = amp * dft(n / n_h, col / n_h, n_v) * dft(n % n_h, col % n_h, n_h);
                out[(g * n_p + np, user * n_bs + n)] = s * w.conj() * scale;
            }
        }
    }
    out
}

/// Posterior of `h` under `(1-λ) δ(h) + λ CN(0, ρ²)` seen through
/// `r = h + CN(0, τ²)`, with the slab moments integrated numerically.
///
/// Both Gaussians factor over real and imaginary parts, so each slab moment
/// is a product of 1-D integrals, done with the trapezoid rule (spectrally
/// accurate for these integrands).
pub struct QuadPosterior {
    pub eta: f64,
    pub mean: Complex64,
    pub var: f64,
}

fn real_normal(x: f64, var: f64) -> f64 {
    (-x * x / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}

/// `(∫ w, ∫ h w, ∫ h² w)` for `w(h) = N(h; 0, a) N(r - h; 0, b)`.
fn slab_moments_1d(r: f64, a: f64, b: f64) -> (f64, f64, f64) {
    let width = a.min(b).sqrt();
    let lo = r.min(0.0) - 40.0 * a.max(b).sqrt();
    let hi = r.max(0.0) + 40.0 * a.max(b).sqrt();
    let step = width / 8.0;
    let n = ((hi - lo) / step).ceil() as usize;
    let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for i in 0..=n {
        let h = lo + i as f64 * step;
        let w = real_normal(h, a) * real_normal(r - h, b);
        z += w;
        m1 += h * w;
        m2 += h * h * w;
    }
    (z * step, m1 * step, m2 * step)
}

pub fn quadrature_posterior(r: Complex64, tau2: f64, lambda: f64, rho2: f64) -> QuadPosterior {
    let (zr, mr, sr) = slab_moments_1d(r.re, rho2 / 2.0, tau2 / 2.0);
    let (zi, mi, si) = slab_moments_1d(r.im, rho2 / 2.0, tau2 / 2.0);
    let slab = zr * zi;
    let spike = real_normal(r.re, tau2 / 2.0) * real_normal(r.im, tau2 / 2.0);
    let evidence = (1.0 - lambda) * spike + lambda * slab;
    let eta = lambda * slab / evidence;
    // slab-conditional moments
    let mean_slab = c(mr / zr, mi / zi);
    let second_slab = sr / zr + si / zi;
    let mean = mean_slab * eta;
    let var = eta * second_slab - mean.norm_sqr();
    QuadPosterior { eta, mean, var }
}

/// Golden-section search for the maximum of a unimodal `f` on `[a, b]`.
pub fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - ratio * (b - a);
    let mut x2 = a + ratio * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while b - a > tol {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + ratio * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - ratio * (b - a);
            f1 = f(x1);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

pub fn phi(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// `Φ(x) = erfc(-x/√2)/2`.
pub fn big_phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x / 2f64.sqrt())
}

fn to_na(m: &CMat) -> DMatrix<Complex64> {
    DMatrix::from_column_slice(m.rows(), m.cols(), m.as_slice())
}

/// Least-squares fit of `Y` on every single user block; returns the best
/// block and the full estimate `Ĥ` (zero outside the block).
pub fn best_single_block(f_dense: &CMat, y: &CMat, n_bs: usize) -> (usize, CMat) {
    let f = to_na(f_dense);
    let y_na = to_na(y);
    let users = f_dense.cols() / n_bs;
    let mut best: Option<(f64, usize, DMatrix<Complex64>)> = None;
    for k in 0..users {
        let a = f.columns(k * n_bs, n_bs).into_owned();
        let gram = a.adjoint() * &a;
        let rhs = a.adjoint() * &y_na;
        let Some(x) = gram.lu().solve(&rhs) else { continue };
        let resid = (&y_na - &a * &x).norm_squared();
        if best.as_ref().is_none_or(|(r, _, _)| resid < *r) {
            best = Some((resid, k, x));
        }
    }
    let (_, k, x) = best.expect("at least one solvable block");
    let mut h = CMat::zeros(f_dense.cols(), y.cols());
    for p in 0..y.cols() {
        for n in 0..n_bs {
            h[(k * n_bs + n, p)] = x[(n, p)];
        }
    }
    (k, h)
}

pub fn nmse_db(h_hat: &CMat, h: &CMat) -> f64 {
    10.0 * (h_hat.sub(h).unwrap().norm_sqr() / h.norm_sqr()).log10()
}
