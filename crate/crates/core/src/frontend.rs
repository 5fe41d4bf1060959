//! Pilots, partially-connected hybrid combiners and the stacked sensing
//! operator.
//!
//! Symbol `g` observes `F^(g) = (1/√K) (s^(g))^T ⊗ (W_RF^(g))^H`, so with
//! `x = vec(X)` (`X` is `N_BS x K`, one column per user) the product is
//! `F^(g) x = (1/√K) W^H (X s^(g))`. Pilots are DFT columns, which turns
//! `X s^(g)` for all `g` at once into one length-`K` FFT per antenna row.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::array::{complex_gaussian, ArrayGeometry, ChannelMatrix};
use crate::cmat::CMat;
use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Entry `(m, n)` of the unnormalized `K`-point DFT matrix, 0-based.
pub fn dft_entry(m: usize, n: usize, k: usize) -> Complex64 {
    let e = ((m * n) % k) as f64;
    Complex64::from_polar(1.0, -2.0 * PI * e / k as f64)
}

/// Pilot vectors for `G` OFDM symbols, each an unscaled column of `D_K`.
/// The same pilot is used on every pilot subcarrier of a symbol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PilotBook {
    k: usize,
    columns: Vec<usize>,
}

impl PilotBook {
    pub fn from_columns(k: usize, columns: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; k];
        for &c in &columns {
            if c >= k {
                return Err(Error::Dimension(format!("DFT column {c} out of range for K = {k}")));
            }
            if std::mem::replace(&mut seen[c], true) {
                return Err(Error::Config(format!("DFT column {c} used twice")));
            }
        }
        Ok(Self { k, columns })
    }

    pub fn users(&self) -> usize {
        self.k
    }

    pub fn symbols(&self) -> usize {
        self.columns.len()
    }

    /// DFT column index (0-based) used in each symbol.
    pub fn columns(&self) -> &[usize] {
        &self.columns
    }

    /// `s^(g)`, length `K`, unit-modulus entries.
    pub fn pilot(&self, g: usize) -> Vec<Complex64> {
        let c = self.columns[g];
        (0..self.k).map(|m| dft_entry(m, c, self.k)).collect()
    }

    /// `K x G` matrix with the pilots as columns.
    pub fn matrix(&self) -> CMat {
        CMat::from_fn(self.k, self.symbols(), |m, g| dft_entry(m, self.columns[g], self.k))
    }
}

/// Draw `G` distinct DFT columns for `K` users.
pub fn gen_pilots<R: Rng + ?Sized>(k: usize, g: usize, rng: &mut R) -> Result<PilotBook> {
    if g > k {
        return Err(Error::TooMany { requested: g, available: k });
    }
    let columns = index::sample(rng, k, g).into_vec();
    PilotBook::from_columns(k, columns)
}

/// Analog combiner `W_RF` of one OFDM symbol (`W_BB = I`).
///
/// Column `n_p` is the 2-D DFT column `dft_columns[n_p]` masked to panel
/// `n_p`'s antennas and scaled by `1/√M_BS`. Since every antenna feeds exactly
/// one RF chain the matrix is stored as one weight per antenna.
#[derive(Debug, Clone, PartialEq)]
pub struct Combiner {
    geom: ArrayGeometry,
    dft_columns: Vec<usize>,
    weights: Vec<Complex64>,
}

impl Combiner {
    pub fn from_dft_columns(geom: ArrayGeometry, dft_columns: Vec<usize>) -> Result<Self> {
        if dft_columns.len() != geom.n_p() {
            return Err(Error::Dimension(format!(
                "{} DFT columns for {} RF chains",
                dft_columns.len(),
                geom.n_p()
            )));
        }
        let (n_h, n_v) = (geom.n_h(), geom.n_v());
        if let Some(&c) = dft_columns.iter().find(|&&c| c >= geom.n_bs()) {
            return Err(Error::Dimension(format!("2-D DFT column {c} out of range")));
        }
        let amp = 1.0 / (geom.m_bs() as f64).sqrt();
        let weights = (0..geom.n_bs())
            .map(|n| {
                let col = dft_columns[geom.panel_of(n)];
                let (row_h, row_v) = (n % n_h, n / n_h);
                let (col_h, col_v) = (col % n_h, col / n_h);
                amp * dft_entry(row_v, col_v, n_v) * dft_entry(row_h, col_h, n_h)
            })
            .collect();
        Ok(Self { geom, dft_columns, weights })
    }

    pub fn geometry(&self) -> &ArrayGeometry {
        &self.geom
    }

    pub fn dft_columns(&self) -> &[usize] {
        &self.dft_columns
    }

    /// Nonzero entry of antenna row `n` (it sits in column `panel_of(n)`).
    pub fn weights(&self) -> &[Complex64] {
        &self.weights
    }

    /// Dense `N_BS x N_P` matrix.
    pub fn dense(&self) -> CMat {
        let mut w = CMat::zeros(self.geom.n_bs(), self.geom.n_p());
        for (n, &v) in self.weights.iter().enumerate() {
            w[(n, self.geom.panel_of(n))] = v;
        }
        w
    }

    /// `W^H v`: antenna domain (length `N_BS`) to RF chains (length `N_P`).
    pub fn combine(&self, v: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![ZERO; self.geom.n_p()];
        for (n, (&w, &x)) in self.weights.iter().zip(v).enumerate() {
            out[self.geom.panel_of(n)] += w.conj() * x;
        }
        out
    }

    /// `W y`: RF chains back to the antenna domain.
    pub fn spread(&self, y: &[Complex64]) -> Vec<Complex64> {
        self.weights
            .iter()
            .enumerate()
            .map(|(n, &w)| w * y[self.geom.panel_of(n)])
            .collect()
    }
}

/// Draw a combiner from `N_P` randomly chosen columns of `D_{N_v} ⊗ D_{N_h}`.
pub fn build_combiner<R: Rng + ?Sized>(geom: &ArrayGeometry, rng: &mut R) -> Result<Combiner> {
    geom.validate()?;
    let cols = index::sample(rng, geom.n_bs(), geom.n_p()).into_vec();
    Combiner::from_dft_columns(*geom, cols)
}

/// How [`SensingOperator`] evaluates `X s^(g)` for all symbols.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProductKernel {
    /// Explicit sum over users for each symbol, `O(G J)`.
    Direct,
    /// One length-`K` FFT per antenna, `O(N_BS K log K)`.
    Fft,
}

/// One nonzero entry set of a column of `F`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseColumn {
    pub rows: Vec<usize>,
    pub values: Vec<Complex64>,
}

/// The stacked `Q x J` measurement map, `Q = G N_P`, `J = K N_BS`, scaled by
/// `1/√K` so that `F F^H = I_Q`.
#[derive(Clone)]
pub struct SensingOperator {
    geom: ArrayGeometry,
    pilots: PilotBook,
    combiners: Vec<Combiner>,
    panel_of: Vec<usize>,
    scale: f64,
    kernel: ProductKernel,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for SensingOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SensingOperator")
            .field("q", &self.q())
            .field("j", &self.j())
            .field("kernel", &self.kernel)
            .finish()
    }
}

/// Stack pilots and per-symbol combiners into `F`.
pub fn assemble_sensing(pilots: PilotBook, combiners: Vec<Combiner>) -> Result<SensingOperator> {
    if combiners.len() != pilots.symbols() {
        return Err(Error::Dimension(format!(
            "{} combiners for {} pilot symbols",
            combiners.len(),
            pilots.symbols()
        )));
    }
    let Some(first) = combiners.first() else {
        return Err(Error::Dimension("need at least one OFDM symbol".into()));
    };
    let geom = *first.geometry();
    if combiners.iter().any(|c| *c.geometry() != geom) {
        return Err(Error::Dimension("combiners disagree on the array geometry".into()));
    }
    let k = pilots.users();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(k);
    let inv = planner.plan_fft_inverse(k);
    // the FFT pays off once there are more symbols than butterfly stages
    let kernel = if (pilots.symbols() as f64) > (k as f64).log2() + 1.0 {
        ProductKernel::Fft
    } else {
        ProductKernel::Direct
    };
    Ok(SensingOperator {
        panel_of: (0..geom.n_bs()).map(|n| geom.panel_of(n)).collect(),
        geom,
        pilots,
        combiners,
        scale: 1.0 / (k as f64).sqrt(),
        kernel,
        fwd,
        inv,
    })
}

impl SensingOperator {
    pub fn q(&self) -> usize {
        self.symbols() * self.geom.n_p()
    }

    pub fn j(&self) -> usize {
        self.users() * self.geom.n_bs()
    }

    pub fn users(&self) -> usize {
        self.pilots.users()
    }

    pub fn symbols(&self) -> usize {
        self.pilots.symbols()
    }

    pub fn geometry(&self) -> &ArrayGeometry {
        &self.geom
    }

    pub fn pilots(&self) -> &PilotBook {
        &self.pilots
    }

    pub fn combiners(&self) -> &[Combiner] {
        &self.combiners
    }

    /// Global scale folded into `F` (`1/√K`).
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn kernel(&self) -> ProductKernel {
        self.kernel
    }

    pub fn with_kernel(mut self, kernel: ProductKernel) -> Self {
        self.kernel = kernel;
        self
    }

    /// `F x` for `x` of length `J`.
    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.j(), "apply: input length");
        let n_bs = self.geom.n_bs();
        let k = self.users();
        let g_count = self.symbols();
        // beams[g * N_BS + n] = (X s^(g))[n]
        let mut beams = vec![ZERO; g_count * n_bs];
        match self.kernel {
            ProductKernel::Fft => {
                let mut rows = vec![ZERO; n_bs * k];
                for (user, block) in x.chunks_exact(n_bs).enumerate() {
                    for (n, &v) in block.iter().enumerate() {
                        rows[n * k + user] = v;
                    }
                }
                self.fwd.process(&mut rows);
                for (g, &c) in self.pilots.columns().iter().enumerate() {
                    for n in 0..n_bs {
                        beams[g * n_bs + n] = rows[n * k + c];
                    }
                }
            }
            ProductKernel::Direct => {
                for g in 0..g_count {
                    let s = self.pilots.pilot(g);
                    let dst = &mut beams[g * n_bs..(g + 1) * n_bs];
                    for (block, &sk) in x.chunks_exact(n_bs).zip(&s) {
                        for (d, &v) in dst.iter_mut().zip(block) {
                            *d += v * sk;
                        }
                    }
                }
            }
        }
        let mut out = Vec::with_capacity(self.q());
        for (g, comb) in self.combiners.iter().enumerate() {
            let y = comb.combine(&beams[g * n_bs..(g + 1) * n_bs]);
            out.extend(y.into_iter().map(|v| v * self.scale));
        }
        out
    }

    /// `F^H y` for `y` of length `Q`.
    pub fn apply_adjoint(&self, y: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(y.len(), self.q(), "apply_adjoint: input length");
        let n_bs = self.geom.n_bs();
        let n_p = self.geom.n_p();
        let k = self.users();
        let spread: Vec<Vec<Complex64>> = self
            .combiners
            .iter()
            .enumerate()
            .map(|(g, comb)| comb.spread(&y[g * n_p..(g + 1) * n_p]))
            .collect();
        let mut x = vec![ZERO; self.j()];
        match self.kernel {
            ProductKernel::Fft => {
                let mut rows = vec![ZERO; n_bs * k];
                for (z, &c) in spread.iter().zip(self.pilots.columns()) {
                    for (n, &v) in z.iter().enumerate() {
                        rows[n * k + c] = v;
                    }
                }
                self.inv.process(&mut rows);
                for (user, block) in x.chunks_exact_mut(n_bs).enumerate() {
                    for (n, dst) in block.iter_mut().enumerate() {
                        *dst = rows[n * k + user] * self.scale;
                    }
                }
            }
            ProductKernel::Direct => {
                for (g, z) in spread.iter().enumerate() {
                    let s = self.pilots.pilot(g);
                    for (block, &sk) in x.chunks_exact_mut(n_bs).zip(&s) {
                        let w = sk.conj() * self.scale;
                        for (d, &v) in block.iter_mut().zip(z) {
                            *d += v * w;
                        }
                    }
                }
            }
        }
        x
    }

    /// `F X` column by column.
    pub fn apply_mat(&self, x: &CMat) -> CMat {
        assert_eq!(x.rows(), self.j());
        let cols: Vec<Vec<Complex64>> = (0..x.cols()).into_par_iter().map(|p| self.apply(x.col(p))).collect();
        CMat::from_columns(self.q(), &cols).expect("column lengths match Q")
    }

    /// `F^H Y` column by column.
    pub fn apply_adjoint_mat(&self, y: &CMat) -> CMat {
        assert_eq!(y.rows(), self.q());
        let cols: Vec<Vec<Complex64>> = (0..y.cols())
            .into_par_iter()
            .map(|p| self.apply_adjoint(y.col(p)))
            .collect();
        CMat::from_columns(self.j(), &cols).expect("column lengths match J")
    }

    /// Nonzeros of column `j` (user `j / N_BS`, antenna `j % N_BS`): one per
    /// symbol, in the row of the RF chain that antenna feeds.
    pub fn column(&self, j: usize) -> SparseColumn {
        let n_bs = self.geom.n_bs();
        let (user, n) = (j / n_bs, j % n_bs);
        let np = self.panel_of[n];
        let mut rows = Vec::with_capacity(self.symbols());
        let mut values = Vec::with_capacity(self.symbols());
        for (g, comb) in self.combiners.iter().enumerate() {
            rows.push(g * self.geom.n_p() + np);
            let s = dft_entry(user, self.pilots.columns()[g], self.users());
            values.push(self.scale * s * comb.weights()[n].conj());
        }
        SparseColumn { rows, values }
    }

    /// RF chain that column `j` lands on within each symbol.
    pub fn column_panel(&self, j: usize) -> usize {
        self.panel_of[j % self.geom.n_bs()]
    }

    /// Materialize `F`. Only sensible for small `J Q`.
    pub fn to_dense(&self) -> CMat {
        let mut f = CMat::zeros(self.q(), self.j());
        for j in 0..self.j() {
            let col = self.column(j);
            for (r, v) in col.rows.into_iter().zip(col.values) {
                f[(r, j)] = v;
            }
        }
        f
    }
}

/// Signal-to-noise setting for [`simulate_received`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Snr {
    Noiseless,
    Db(f64),
}

impl Snr {
    pub fn db(&self) -> f64 {
        match self {
            Snr::Noiseless => f64::INFINITY,
            Snr::Db(v) => *v,
        }
    }
}

impl From<f64> for Snr {
    fn from(db: f64) -> Self {
        if db == f64::INFINITY {
            Snr::Noiseless
        } else {
            Snr::Db(db)
        }
    }
}

/// Received pilots `Y = F H + N`, `Q x P`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub y: CMat,
    /// Per-entry variance of `N` in the scaled system.
    pub noise_var: f64,
    pub snr_db: f64,
}

/// Simulate measurements. The noise variance is set from the mean per-entry
/// power of `F H` in this very realization.
pub fn simulate_received<R: Rng + ?Sized>(
    f: &SensingOperator,
    h: &ChannelMatrix,
    snr: Snr,
    rng: &mut R,
) -> Result<MeasurementSet> {
    if h.matrix().rows() != f.j() {
        return Err(Error::Dimension(format!(
            "channel has {} rows, operator expects J = {}",
            h.matrix().rows(),
            f.j()
        )));
    }
    let mut y = f.apply_mat(h.matrix());
    let noise_var = match snr {
        Snr::Noiseless => 0.0,
        Snr::Db(db) => {
            if !db.is_finite() {
                return Err(Error::Config(format!("SNR must be finite, got {db}")));
            }
            let power = y.norm_sqr() / (y.rows() * y.cols()) as f64;
            if power == 0.0 {
                return Err(Error::ZeroSignal);
            }
            power / 10f64.powf(db / 10.0)
        }
    };
    if noise_var > 0.0 {
        for z in y.as_mut_slice() {
            *z += complex_gaussian(rng, noise_var);
        }
    }
    Ok(MeasurementSet { y, noise_var, snr_db: snr.db() })
}
