//! Joint active-user detection and channel estimation for grant-free
//! massive IoT access over a multi-panel mmWave/THz massive-MIMO base
//! station.
//!
//! The crate is organized the same way a simulation trial flows:
//!
//! * [`array`] synthesizes multi-panel array responses, per-user multipath
//!   channels and the sparse activity pattern.
//! * [`frontend`] draws DFT pilots and partially-connected hybrid combiners
//!   and assembles the row-orthonormal sensing operator `F` together with the
//!   noisy measurements `Y = F H + N`.
//! * [`solver`] recovers `H` with the OAMP-EM-MMV iteration (orthogonal AMP
//!   with a Bernoulli-Gaussian denoiser and EM-learned noise variance and
//!   joint sparsity ratios).
//! * [`detect`] turns the estimate into per-user activity decisions and
//!   scores them.
//! * [`baseline`] is a block-aware simultaneous OMP reference.
//! * [`harness`] runs seeded Monte Carlo sweeps and writes CSV.
//!
//! Runnable walkthroughs live in the crate's `examples/` directory.

pub mod array;
pub mod baseline;
pub mod cmat;
pub mod detect;
pub mod dump;
pub mod error;
pub mod frontend;
pub mod harness;
pub mod selftest;
pub mod solver;

pub use cmat::{CMat, RealMat};
pub use error::{Error, Result};
pub use num_complex::Complex64;

/// Real Gaussian helpers shared by the initializer and the test oracles.
pub mod gauss {
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    /// Standard normal density.
    pub fn pdf(x: f64) -> f64 {
        (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
    }

    /// Standard normal CDF.
    pub fn cdf(x: f64) -> f64 {
        0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
    }
}
