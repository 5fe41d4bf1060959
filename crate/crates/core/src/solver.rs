//! OAMP-EM-MMV: orthogonal AMP over all pilot subcarriers jointly, with a
//! Bernoulli-Gaussian denoiser and EM learning of the noise variance and of
//! row-shared sparsity ratios.
//!
//! One iteration is LE → NLE → EM:
//!
//! * LE: `r_p = u_p + (J/Q) F^H (y_p - F u_p)`, valid because `F F^H = I`.
//!   The error variance of `u_p` entering `τ_p²` is read off the residual
//!   `y_p - F u_p` by default, which keeps `τ²` honest while the EM
//!   parameters are still off.
//! * NLE: scalar posterior of `h_{j,p}` given `r_{j,p} = h + τ_p z`, then the
//!   divergence-free output `u_p` whose error variance is `v_p²`.
//! * EM: `λ_j` becomes the across-subcarrier mean of the belief indicators;
//!   `σ²` is refreshed from the LE-side Gaussian posterior (or, optionally,
//!   from the posterior-corrected residual).
//!
//! Every row of `F` touches the antennas of a single panel, so the variances
//! `τ²`, `ω̄`, `v²` are tracked per (panel, subcarrier) by default. A single
//! average per subcarrier lets panels that converge at different rates share
//! one wrong Onsager correction, and the iteration diverges. The NLE output is
//! lightly damped for the same reason once `λ` has locked onto a support.

use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cmat::{norm_sqr, CMat, RealMat};
use crate::error::{Error, Result};
use crate::frontend::SensingOperator;
use crate::gauss;

/// Initial SNR guess (linear) behind the starting noise variance.
pub const INITIAL_SNR: f64 = 100.0;
/// Lower bound for every variance the iteration divides by.
pub const VARIANCE_FLOOR: f64 = 1e-12;
/// Sparsity ratios are kept inside `[ε, 1 - ε]` before entering the posterior.
pub const LAMBDA_EPS: f64 = 1e-12;
const CLAMP_FACTOR: f64 = 1.0 - 1e-6;

/// How the per-coefficient sparsity ratio is refreshed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SparsityUpdate {
    /// `λ_{j,p} = (1/P) Σ_p η_{j,p}` for every `p` (common support).
    Joint,
    /// `λ_{j,p} = η_{j,p}` (single measurement vector rule, for ablation).
    PerEntry,
}

/// Starting value of the NLE error variance `v_p²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialVariance {
    /// `v_p² = 1`, which presumes a unit-power channel.
    Unit,
    /// `v_p² = ||y_p||²/Q - σ²`, the mean power of `h_p` seen through a
    /// row-orthonormal `F`; this is the actual error of `u_p = 0`.
    Measured,
}

/// Which coefficients share one set of LE/NLE variance statistics
/// (`τ²`, `ω̄`, `v²`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceScope {
    /// One set per subcarrier, averaged over all `J` coefficients.
    Subcarrier,
    /// One set per (panel, subcarrier). Every row of `F` touches a single
    /// panel, so the recovery splits into `N_P` decoupled blocks whose errors
    /// shrink at different rates.
    Panel,
}

/// Which posterior the EM noise-variance update is taken over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseUpdate {
    /// `σ² = (1/P) Σ_p [||y_p - F ξ_p||²/Q + ω̄_p]`, from the separable NLE
    /// posterior. Its residual still holds the estimation error, so the
    /// estimate sits well above the true noise until the recovery is nearly
    /// exact.
    Residual,
    /// M-step over the Gaussian LE posterior `h ~ CN(u, v² I)` given `y`:
    /// with `γ = σ²/(v² + σ²)`, `σ² ← γ² ||y - F u||²/Q + γ v²`. Its fixed
    /// point is the true noise variance whenever `v²` tracks the error of `u`.
    Extrinsic,
}

/// Where the LE takes the error variance `v²` of its input `u` from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LeVariance {
    /// The extrinsic NLE variance `(1/ω̄ - 1/τ²)^{-1}`. Exact only when the
    /// prior matches the data, which the EM estimates do not early on.
    Extrinsic,
    /// `v² = ||y - F u||²/Q - σ²` per group, the error `u` actually has.
    Residual,
}

/// Which form of the sparsity-ratio initializer curve to maximize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdCurve {
    /// `(1 + c²) Φ(-c) - c φ(c)`.
    Standard,
    /// `(1 + c)² Φ(-c) - c φ(c)`.
    Binomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub iterations: usize,
    pub initial_snr: f64,
    pub sparsity_update: SparsityUpdate,
    pub initial_variance: InitialVariance,
    pub threshold_curve: ThresholdCurve,
    pub variance_scope: VarianceScope,
    pub noise_update: NoiseUpdate,
    pub le_variance: LeVariance,
    /// Weight of the new NLE output in `u ← β u_new + (1-β) u_old` (and the
    /// same for `v²`) from the second iteration on; `1` disables damping.
    pub damping: f64,
    /// Re-estimate `ρ²` every iteration instead of fixing it at start-up.
    pub learn_signal_variance: bool,
    pub trace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            initial_snr: INITIAL_SNR,
            sparsity_update: SparsityUpdate::Joint,
            initial_variance: InitialVariance::Measured,
            threshold_curve: ThresholdCurve::Standard,
            variance_scope: VarianceScope::Panel,
            noise_update: NoiseUpdate::Extrinsic,
            le_variance: LeVariance::Residual,
            damping: 0.8,
            learn_signal_variance: false,
            trace: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iteration budget T must be >= 1".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Config(format!("damping must lie in (0, 1], got {}", self.damping)));
        }
        if !(self.initial_snr.is_finite() && self.initial_snr > 0.0) {
            return Err(Error::Config(format!("initial SNR must be positive, got {}", self.initial_snr)));
        }
        Ok(())
    }
}

/// Bernoulli-Gaussian prior: `h ~ (1-λ) δ(h) + λ CN(0, ρ²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prior {
    /// `λ_{j,p}`, `J x P`.
    pub lambda: RealMat,
    pub rho2: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Diagnostics {
    /// `Y` was identically zero, so the noise estimate started on the floor.
    pub zero_measurements: bool,
    /// The moment estimate of `ρ²` was not positive and a fallback was used.
    pub signal_variance_fallback: bool,
    /// Number of (iteration, group, subcarrier) cells where `ω̄ >= τ²` was clamped.
    pub clamped_variance: usize,
}

/// Assignment of coefficients and measurements to variance groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarianceGroups {
    count: usize,
    by_antenna: Vec<usize>,
    by_row: Vec<usize>,
}

impl VarianceGroups {
    pub fn new(f: &SensingOperator, scope: VarianceScope) -> Self {
        let geom = f.geometry();
        let n_p = geom.n_p();
        match scope {
            VarianceScope::Subcarrier => Self { count: 1, by_antenna: vec![0; geom.n_bs()], by_row: vec![0; n_p] },
            VarianceScope::Panel => Self {
                count: n_p,
                by_antenna: (0..geom.n_bs()).map(|n| geom.panel_of(n)).collect(),
                by_row: (0..n_p).collect(),
            },
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Group of coefficient row `j`.
    #[inline]
    pub fn of_coefficient(&self, j: usize) -> usize {
        self.by_antenna[j % self.by_antenna.len()]
    }

    /// Group of measurement row `q` (rows are ordered symbol-major, then RF chain).
    #[inline]
    pub fn of_measurement(&self, q: usize) -> usize {
        self.by_row[q % self.by_row.len()]
    }
}

/// Everything the iteration carries between steps. The variance fields are
/// `groups x P`.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub iteration: usize,
    pub groups: VarianceGroups,
    pub r: CMat,
    pub tau2: RealMat,
    pub u: CMat,
    pub v2: RealMat,
    pub xi: CMat,
    pub omega: RealMat,
    pub eta: RealMat,
    pub omega_bar: RealMat,
    pub psi2: RealMat,
    pub sigma2: f64,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub p: usize,
    pub tau2: f64,
    pub v2: f64,
    pub sigma2: f64,
    pub mean_lambda: f64,
}

#[derive(Debug, Clone)]
pub struct SolverOutput {
    /// `Ĥ = ξ` after the last iteration, `J x P`.
    pub h_hat: CMat,
    /// Final belief indicators, `J x P`.
    pub eta: RealMat,
    pub sigma2: f64,
    pub prior: Prior,
    pub trace: Vec<TraceRow>,
    pub diagnostics: Diagnostics,
}

/// Posterior of one coefficient under the Bernoulli-Gaussian prior given
/// `r = h + τ z`, `z ~ CN(0,1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarPosterior {
    /// Belief indicator `P(h ≠ 0 | r)`.
    pub eta: f64,
    pub mean: Complex64,
    pub var: f64,
}

/// Closed-form Bernoulli-Gaussian posterior, computed in the log domain.
pub fn posterior(r: Complex64, tau2: f64, lambda: f64, rho2: f64) -> ScalarPosterior {
    let lambda = lambda.clamp(LAMBDA_EPS, 1.0 - LAMBDA_EPS);
    let tau2 = tau2.max(VARIANCE_FLOOR);
    let spread = rho2 + tau2;
    let m = r.norm_sqr();
    // log a - log b
    let log_ratio = (1.0 - lambda).ln() - lambda.ln() + (spread / tau2).ln() - m / tau2 + m / spread;
    posterior_from_log_ratio(r, tau2, rho2, log_ratio)
}

#[inline]
fn posterior_from_log_ratio(r: Complex64, tau2: f64, rho2: f64, log_ratio: f64) -> ScalarPosterior {
    let eta = 1.0 / (1.0 + log_ratio.exp());
    let spread = rho2 + tau2;
    let kappa = r * (rho2 / spread);
    let psi2 = rho2 * tau2 / spread;
    ScalarPosterior {
        eta,
        mean: kappa * eta,
        var: eta * psi2 + eta * (1.0 - eta) * kappa.norm_sqr(),
    }
}

/// The curve whose maximum over `c > 0` gives the starting sparsity ratio,
/// for undersampling ratio `delta = Q/J`.
pub fn threshold_objective(c: f64, delta: f64, curve: ThresholdCurve) -> f64 {
    let lead = match curve {
        ThresholdCurve::Standard => 1.0 + c * c,
        ThresholdCurve::Binomial => (1.0 + c) * (1.0 + c),
    };
    let m = lead * gauss::cdf(-c) - c * gauss::pdf(c);
    let den = 1.0 + c * c - 2.0 * m;
    if den <= 0.0 {
        return f64::NEG_INFINITY;
    }
    (1.0 - 2.0 * m / delta) / den
}

/// Starting sparsity ratio `λ⁰ = (Q/J) max_c threshold_objective(c)`, by grid
/// search over `c ∈ (0, 10]` with step `1e-4`.
pub fn initial_sparsity(q: usize, j: usize, curve: ThresholdCurve) -> f64 {
    let delta = q as f64 / j as f64;
    let best = (1..=100_000)
        .map(|i| threshold_objective(i as f64 * 1e-4, delta, curve))
        .fold(f64::NEG_INFINITY, f64::max);
    (delta * best).clamp(LAMBDA_EPS, 1.0 - LAMBDA_EPS)
}

fn check_dims(f: &SensingOperator, y: &CMat) -> Result<()> {
    if y.rows() != f.q() {
        return Err(Error::Dimension(format!(
            "Y has {} rows, operator has Q = {}",
            y.rows(),
            f.q()
        )));
    }
    if y.cols() == 0 {
        return Err(Error::Dimension("Y has no columns".into()));
    }
    Ok(())
}

/// Prior and state at `t = 0`.
pub fn init_params(y: &CMat, f: &SensingOperator, cfg: &SolverConfig) -> Result<(Prior, SolverState)> {
    check_dims(f, y)?;
    let (q, j, p) = (f.q(), f.j(), y.cols());
    let mut diagnostics = Diagnostics::default();

    let lambda0 = initial_sparsity(q, j, cfg.threshold_curve);
    let energy: Vec<f64> = y.columns().map(norm_sqr).collect();
    let mean_energy = energy.iter().sum::<f64>() / p as f64;
    let mut sigma2 = mean_energy / ((cfg.initial_snr + 1.0) * q as f64);
    if sigma2 == 0.0 {
        diagnostics.zero_measurements = true;
    }
    sigma2 = sigma2.max(VARIANCE_FLOOR);

    // ||F||_F² = Q for a row-orthonormal operator
    let excess = mean_energy - q as f64 * sigma2;
    let rho2 = if excess > 0.0 {
        (excess / (q as f64 * lambda0)).max(VARIANCE_FLOOR)
    } else {
        diagnostics.signal_variance_fallback = true;
        1.0
    };

    let groups = VarianceGroups::new(f, cfg.variance_scope);
    let n_groups = groups.count();
    let mut v2 = RealMat::filled(n_groups, p, 1.0);
    if cfg.initial_variance == InitialVariance::Measured {
        let rows_per_group = (q / n_groups) as f64;
        for c in 0..p {
            let mut per_group = vec![0.0; n_groups];
            for (row, z) in y.col(c).iter().enumerate() {
                per_group[groups.of_measurement(row)] += z.norm_sqr();
            }
            for (grp, e) in per_group.into_iter().enumerate() {
                v2.set(grp, c, (e / rows_per_group - sigma2).max(VARIANCE_FLOOR));
            }
        }
    }

    let state = SolverState {
        iteration: 0,
        groups,
        r: CMat::zeros(j, p),
        tau2: RealMat::filled(n_groups, p, 1.0),
        u: CMat::zeros(j, p),
        v2,
        xi: CMat::zeros(j, p),
        omega: RealMat::filled(j, p, 0.0),
        eta: RealMat::filled(j, p, 0.0),
        omega_bar: RealMat::filled(n_groups, p, 0.0),
        psi2: RealMat::filled(n_groups, p, 0.0),
        sigma2,
        diagnostics,
    };
    let prior = Prior { lambda: RealMat::filled(j, p, lambda0), rho2 };
    Ok((prior, state))
}

/// Replace `v²` by the measured error of `u`: `||y_g - (F u)_g||²/Q_g - σ²`
/// for every group `g`.
pub fn residual_variance(state: &mut SolverState, f: &SensingOperator, y: &CMat) {
    let groups = &state.groups;
    let n_groups = groups.count();
    let rows_per_group = (f.q() / n_groups) as f64;
    let sigma2 = state.sigma2;
    let u = &state.u;
    let per_col: Vec<Vec<f64>> = (0..y.cols())
        .into_par_iter()
        .map(|c| {
            let fu = f.apply(u.col(c));
            let mut resid = vec![0.0; n_groups];
            for (row, (a, b)) in y.col(c).iter().zip(&fu).enumerate() {
                resid[groups.of_measurement(row)] += (a - b).norm_sqr();
            }
            resid
        })
        .collect();
    for (c, resid) in per_col.into_iter().enumerate() {
        for (grp, e) in resid.into_iter().enumerate() {
            state.v2.set(grp, c, (e / rows_per_group - sigma2).max(VARIANCE_FLOOR));
        }
    }
}

/// Linear estimator for every subcarrier.
pub fn le_step(state: &mut SolverState, f: &SensingOperator, y: &CMat) {
    let (q, j) = (f.q() as f64, f.j() as f64);
    let gain = j / q;
    let rows = f.j();
    let u = &state.u;
    state
        .r
        .as_mut_slice()
        .par_chunks_mut(rows)
        .enumerate()
        .for_each(|(p, r_p)| {
            let u_p = u.col(p);
            let fu = f.apply(u_p);
            let resid: Vec<Complex64> = y.col(p).iter().zip(&fu).map(|(a, b)| a - b).collect();
            let back = f.apply_adjoint(&resid);
            for ((r, &uu), &b) in r_p.iter_mut().zip(u_p).zip(&back) {
                *r = uu + b * gain;
            }
        });
    let sigma2 = state.sigma2;
    for (t, &v) in state.tau2.as_mut_slice().iter_mut().zip(state.v2.as_slice()) {
        *t = ((j - q) / q * v + gain * sigma2).max(VARIANCE_FLOOR);
    }
}

/// Orthogonalized output from the posterior mean `xi`, given the
/// mean posterior variance and the input variance.
fn divergence_free(omega_bar: f64, tau2: f64, r: Complex64, xi: Complex64) -> Complex64 {
    (xi * tau2 - r * omega_bar) / (tau2 - omega_bar)
}

/// `v² = (1/ω̄ - 1/τ²)^{-1}`.
pub fn extrinsic_variance(omega_bar: f64, tau2: f64) -> f64 {
    omega_bar * tau2 / (tau2 - omega_bar)
}

/// Bernoulli-Gaussian denoiser plus the orthogonal output for every
/// subcarrier.
pub fn nle_step(state: &mut SolverState, prior: &Prior) {
    let j = state.r.rows();
    let rho2 = prior.rho2;
    let groups = &state.groups;
    let n_groups = groups.count();
    let group_size = (j / n_groups) as f64;
    let tau2 = &state.tau2;

    let sums: Vec<Vec<f64>> = state
        .xi
        .as_mut_slice()
        .par_chunks_mut(j)
        .zip(state.omega.as_mut_slice().par_chunks_mut(j))
        .zip(state.eta.as_mut_slice().par_chunks_mut(j))
        .zip(state.r.as_slice().par_chunks(j))
        .zip(prior.lambda.as_slice().par_chunks(j))
        .enumerate()
        .map(|(p, ((((xi_p, om_p), eta_p), r_p), lam_p))| {
            let consts: Vec<(f64, f64, f64)> = tau2
                .col(p)
                .iter()
                .map(|&t| {
                    let t = t.max(VARIANCE_FLOOR);
                    let spread = rho2 + t;
                    (t, (spread / t).ln(), 1.0 / t - 1.0 / spread)
                })
                .collect();
            let mut total = vec![0.0; n_groups];
            for i in 0..j {
                let grp = groups.of_coefficient(i);
                let (t, width, contrast) = consts[grp];
                let lam = lam_p[i].clamp(LAMBDA_EPS, 1.0 - LAMBDA_EPS);
                let log_ratio = (1.0 - lam).ln() - lam.ln() + width - r_p[i].norm_sqr() * contrast;
                let post = posterior_from_log_ratio(r_p[i], t, rho2, log_ratio);
                xi_p[i] = post.mean;
                om_p[i] = post.var;
                eta_p[i] = post.eta;
                total[grp] += post.var;
            }
            total
        })
        .collect();

    for (p, total) in sums.iter().enumerate() {
        for (grp, &sum) in total.iter().enumerate() {
            let t = state.tau2.get(grp, p).max(VARIANCE_FLOOR);
            let limit = CLAMP_FACTOR * t;
            let omega_bar = sum / group_size;
            let omega_bar = if omega_bar >= limit {
                state.diagnostics.clamped_variance += 1;
                limit
            } else {
                omega_bar
            };
            state.omega_bar.set(grp, p, omega_bar);
            state.psi2.set(grp, p, rho2 * t / (rho2 + t));
            state.v2.set(grp, p, extrinsic_variance(omega_bar, t));
        }
    }

    let omega_bar = &state.omega_bar;
    let groups = &state.groups;
    state
        .u
        .as_mut_slice()
        .par_chunks_mut(j)
        .zip(state.r.as_slice().par_chunks(j))
        .zip(state.xi.as_slice().par_chunks(j))
        .enumerate()
        .for_each(|(p, ((u_p, r_p), xi_p))| {
            for i in 0..j {
                let grp = groups.of_coefficient(i);
                let t = tau2.get(grp, p).max(VARIANCE_FLOOR);
                u_p[i] = divergence_free(omega_bar.get(grp, p), t, r_p[i], xi_p[i]);
            }
        });
}

/// Blend the fresh NLE output with the previous one: `x ← β x + (1-β) x_old`
/// for `u` and `v²`.
pub fn damp(state: &mut SolverState, u_old: &CMat, v2_old: &RealMat, beta: f64) {
    for (u, &old) in state.u.as_mut_slice().iter_mut().zip(u_old.as_slice()) {
        *u = *u * beta + old * (1.0 - beta);
    }
    for (v, &old) in state.v2.as_mut_slice().iter_mut().zip(v2_old.as_slice()) {
        *v = *v * beta + old * (1.0 - beta);
    }
}

/// EM refresh of the sparsity ratios and the noise variance (and optionally
/// `ρ²`) from the current posterior.
pub fn em_update(state: &mut SolverState, prior: &mut Prior, f: &SensingOperator, y: &CMat, cfg: &SolverConfig) {
    let (j, p) = (state.eta.rows(), state.eta.cols());

    match cfg.sparsity_update {
        SparsityUpdate::Joint => {
            for row in 0..j {
                let mean = (0..p).map(|c| state.eta.get(row, c)).sum::<f64>() / p as f64;
                for c in 0..p {
                    prior.lambda.set(row, c, mean);
                }
            }
        }
        SparsityUpdate::PerEntry => {
            prior.lambda.as_mut_slice().copy_from_slice(state.eta.as_slice());
        }
    }

    if cfg.learn_signal_variance {
        let mut num = 0.0;
        let mut den = 0.0;
        for c in 0..p {
            for (i, (&eta, r)) in state.eta.col(c).iter().zip(state.r.col(c)).enumerate() {
                let tau2 = state.tau2.get(state.groups.of_coefficient(i), c).max(VARIANCE_FLOOR);
                let spread = prior.rho2 + tau2;
                let shrink = prior.rho2 / spread;
                let psi2 = prior.rho2 * tau2 / spread;
                num += eta * (shrink * shrink * r.norm_sqr() + psi2);
                den += eta;
            }
        }
        if den > 0.0 && num > 0.0 {
            prior.rho2 = (num / den).max(VARIANCE_FLOOR);
        }
    }

    let q = f.q() as f64;
    let terms: Vec<f64> = match cfg.noise_update {
        NoiseUpdate::Residual => (0..p)
            .into_par_iter()
            .map(|c| {
                let fx = f.apply(state.xi.col(c));
                let resid: f64 = y.col(c).iter().zip(&fx).map(|(a, b)| (a - b).norm_sqr()).sum();
                let omega_bar = state.omega_bar.col(c);
                // equal-sized groups: the mean of the group means is (1/J) Σ_j ω_j
                resid / q + omega_bar.iter().sum::<f64>() / omega_bar.len() as f64
            })
            .collect(),
        NoiseUpdate::Extrinsic => {
            let groups = &state.groups;
            let n_groups = groups.count();
            let rows_per_group = q / n_groups as f64;
            let sigma2 = state.sigma2;
            (0..p)
                .into_par_iter()
                .map(|c| {
                    let fu = f.apply(state.u.col(c));
                    let mut resid = vec![0.0; n_groups];
                    for (row, (a, b)) in y.col(c).iter().zip(&fu).enumerate() {
                        resid[groups.of_measurement(row)] += (a - b).norm_sqr();
                    }
                    let total: f64 = resid
                        .iter()
                        .zip(state.v2.col(c))
                        .map(|(&e, &v2)| {
                            let gamma = sigma2 / (v2 + sigma2);
                            gamma * gamma * e / rows_per_group + gamma * v2
                        })
                        .sum();
                    total / n_groups as f64
                })
                .collect()
        }
    };
    state.sigma2 = (terms.iter().sum::<f64>() / p as f64).max(VARIANCE_FLOOR);
}

/// Stepwise driver around the three module updates.
pub struct Solver<'a> {
    f: &'a SensingOperator,
    y: &'a CMat,
    cfg: SolverConfig,
    prior: Prior,
    state: SolverState,
    trace: Vec<TraceRow>,
}

impl<'a> Solver<'a> {
    pub fn new(f: &'a SensingOperator, y: &'a CMat, cfg: SolverConfig) -> Result<Self> {
        let (prior, state) = init_params(y, f, &cfg)?;
        Ok(Self { f, y, cfg, prior, state, trace: Vec::new() })
    }

    pub fn state(&self) -> &SolverState {
        &self.state
    }

    pub fn prior(&self) -> &Prior {
        &self.prior
    }

    pub fn iteration(&self) -> usize {
        self.state.iteration
    }

    /// Run one LE → NLE → EM iteration.
    pub fn step(&mut self) -> Result<()> {
        let t = self.state.iteration + 1;
        if self.cfg.le_variance == LeVariance::Residual && t > 1 {
            residual_variance(&mut self.state, self.f, self.y);
        }
        le_step(&mut self.state, self.f, self.y);
        if !self.state.r.is_finite() || self.state.tau2.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { iteration: t, quantity: "linear estimate" });
        }
        let previous = (self.cfg.damping < 1.0 && t > 1).then(|| (self.state.u.clone(), self.state.v2.clone()));
        nle_step(&mut self.state, &self.prior);
        if let Some((u_old, v2_old)) = previous {
            damp(&mut self.state, &u_old, &v2_old, self.cfg.damping);
        }
        if !self.state.xi.is_finite() || self.state.v2.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { iteration: t, quantity: "posterior" });
        }
        em_update(&mut self.state, &mut self.prior, self.f, self.y, &self.cfg);
        if !self.state.sigma2.is_finite() || !self.prior.rho2.is_finite() {
            return Err(Error::NonFinite { iteration: t, quantity: "EM parameters" });
        }
        self.state.iteration = t;
        if self.cfg.trace {
            let mean = |m: &[f64]| m.iter().sum::<f64>() / m.len() as f64;
            for p in 0..self.state.tau2.cols() {
                let lam = self.prior.lambda.col(p);
                self.trace.push(TraceRow {
                    iteration: t,
                    p,
                    tau2: mean(self.state.tau2.col(p)),
                    v2: mean(self.state.v2.col(p)),
                    sigma2: self.state.sigma2,
                    mean_lambda: lam.iter().sum::<f64>() / lam.len() as f64,
                });
            }
        }
        Ok(())
    }

    pub fn finish(self) -> SolverOutput {
        SolverOutput {
            h_hat: self.state.xi,
            eta: self.state.eta,
            sigma2: self.state.sigma2,
            prior: self.prior,
            trace: self.trace,
            diagnostics: self.state.diagnostics,
        }
    }
}

/// Run the full iteration for `cfg.iterations` steps.
pub fn run(y: &CMat, f: &SensingOperator, cfg: &SolverConfig) -> Result<SolverOutput> {
    cfg.validate()?;
    let mut solver = Solver::new(f, y, *cfg)?;
    for _ in 0..cfg.iterations {
        solver.step()?;
    }
    Ok(solver.finish())
}

/// Write a trace as CSV (`iteration,p,tau2,v2,sigma2,mean_lambda`).
pub fn write_trace_csv<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::{complex_gaussian, ArrayGeometry};
    use crate::frontend::{assemble_sensing, build_combiner, gen_pilots, Combiner, PilotBook};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn small_operator(seed: u64, k: usize, g: usize) -> SensingOperator {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let geom = ArrayGeometry::new(2, 1, 2, 1, 2).unwrap();
        let pilots = gen_pilots(k, g, &mut rng).unwrap();
        let combs = (0..g).map(|_| build_combiner(&geom, &mut rng).unwrap()).collect();
        assemble_sensing(pilots, combs).unwrap()
    }

    #[test]
    fn posterior_anchor_values() {
        let post = posterior(c(0.0, 0.0), 1.0, 0.5, 1.0);
        assert!((post.eta - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(post.mean, c(0.0, 0.0));
        let zero = posterior(c(0.3, -2.0), 0.7, 0.0, 2.0);
        assert!(zero.eta < 1e-10 && zero.mean.norm() < 1e-10 && zero.var < 1e-10);
    }

    #[test]
    fn posterior_survives_extreme_inputs() {
        let far = posterior(c(1e4, 0.0), 1e-3, 0.1, 1.0);
        assert!((far.eta - 1.0).abs() < 1e-12 && far.var.is_finite());
        let near = posterior(c(0.0, 0.0), 1e-12, 0.1, 1.0);
        assert!(near.eta < 1e-6 && near.eta >= 0.0);
    }

    #[test]
    fn noise_variance_start() {
        let f = small_operator(1, 4, 1);
        assert_eq!(f.q(), 2);
        let y = CMat::from_col_major(2, 1, vec![c(20.0, 0.0), c(2.0, 0.0)]).unwrap();
        let (_, st) = init_params(&y, &f, &SolverConfig::default()).unwrap();
        assert!((st.sigma2 - 404.0 / (101.0 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_measurements_flagged() {
        let f = small_operator(2, 8, 3);
        let y = CMat::zeros(f.q(), 2);
        let (_, st) = init_params(&y, &f, &SolverConfig::default()).unwrap();
        assert!(st.diagnostics.zero_measurements);
        assert_eq!(st.sigma2, VARIANCE_FLOOR);
    }

    #[test]
    fn le_variance_arithmetic() {
        // K = 2 users of 4 antennas on 2 panels, G = 2 symbols
        let f = small_operator(3, 2, 2);
        assert_eq!((f.j(), f.q()), (8, 4));
        let y = CMat::zeros(4, 1);
        let (_, mut st) = init_params(&y, &f, &SolverConfig::default()).unwrap();
        st.v2 = RealMat::filled(st.groups.count(), 1, 1.0);
        st.sigma2 = 0.1;
        le_step(&mut st, &f, &y);
        assert!(st.tau2.as_slice().iter().all(|t| (t - 1.2).abs() < 1e-12));
    }

    #[test]
    fn le_from_zero_is_scaled_back_projection() {
        let f = small_operator(4, 6, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y = CMat::from_fn(f.q(), 2, |_, _| complex_gaussian(&mut rng, 1.0));
        let (_, mut st) = init_params(&y, &f, &SolverConfig::default()).unwrap();
        le_step(&mut st, &f, &y);
        let gain = f.j() as f64 / f.q() as f64;
        for p in 0..2 {
            let back = f.apply_adjoint(y.col(p));
            for (r, b) in st.r.col(p).iter().zip(&back) {
                assert!((r - b * gain).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn square_unitary_recovers_in_one_step() {
        // one antenna per panel makes F square: N_P = N_BS = 4, K = G = 2
        let geom = ArrayGeometry::new(2, 2, 1, 1, 2).unwrap();
        let combs = vec![
            Combiner::from_dft_columns(geom, vec![0, 1, 2, 3]).unwrap(),
            Combiner::from_dft_columns(geom, vec![3, 2, 1, 0]).unwrap(),
        ];
        let f = assemble_sensing(PilotBook::from_columns(2, vec![0, 1]).unwrap(), combs).unwrap();
        assert_eq!(f.q(), f.j());
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let h: Vec<Complex64> = (0..f.j()).map(|_| complex_gaussian(&mut rng, 1.0)).collect();
        let y = CMat::from_columns(f.q(), &[f.apply(&h)]).unwrap();
        let (_, mut st) = init_params(&y, &f, &SolverConfig::default()).unwrap();
        le_step(&mut st, &f, &y);
        for (r, hh) in st.r.col(0).iter().zip(&h) {
            assert!((r - hh).norm() < 1e-10);
        }
    }

    #[test]
    fn nle_variance_arithmetic() {
        assert!((extrinsic_variance(0.5, 1.0) - 1.0).abs() < 1e-12);
        // v² (ξ/ω̄ - r/τ²) = 1 * (1 - 1)
        assert!(divergence_free(0.5, 1.0, c(1.0, 0.0), c(0.5, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn nle_clamps_variance() {
        let f = small_operator(5, 4, 2);
        let y = CMat::zeros(f.q(), 1);
        let (mut prior, mut st) = init_params(&y, &f, &SolverConfig::default()).unwrap();
        prior.rho2 = 100.0;
        prior.lambda = RealMat::filled(f.j(), 1, 0.5);
        st.tau2 = RealMat::filled(st.groups.count(), 1, 1.0);
        // |r|² where a = b: the mixture is maximally uncertain and ω ≈ |κ|²/4
        let m = 101f64.ln() / (1.0 - 1.0 / 101.0);
        for z in st.r.as_mut_slice() {
            *z = c(m.sqrt(), 0.0);
        }
        nle_step(&mut st, &prior);
        assert!(st.omega_bar.as_slice().iter().all(|&w| w < 1.0));
        assert!(st.v2.as_slice().iter().all(|&v| v > 0.0 && v.is_finite()));
        assert_eq!(st.diagnostics.clamped_variance, st.groups.count());
    }

    #[test]
    fn joint_sparsity_update_averages_rows() {
        let f = small_operator(6, 4, 2);
        let y = CMat::zeros(f.q(), 2);
        let cfg = SolverConfig::default();
        let (mut prior, mut st) = init_params(&y, &f, &cfg).unwrap();
        st.eta.set(0, 0, 0.2);
        st.eta.set(0, 1, 0.4);
        em_update(&mut st, &mut prior, &f, &y, &cfg);
        assert!((prior.lambda.get(0, 0) - 0.3).abs() < 1e-15);
        assert!((prior.lambda.get(0, 1) - 0.3).abs() < 1e-15);

        let per = SolverConfig { sparsity_update: SparsityUpdate::PerEntry, ..cfg };
        em_update(&mut st, &mut prior, &f, &y, &per);
        assert_eq!(prior.lambda.get(0, 1), 0.4);
    }

    #[test]
    fn noise_update_residual_only() {
        let f = small_operator(7, 4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = CMat::from_fn(f.q(), 3, |_, _| complex_gaussian(&mut rng, 1.0));
        let cfg = SolverConfig { noise_update: NoiseUpdate::Residual, ..SolverConfig::default() };
        let (mut prior, mut st) = init_params(&y, &f, &cfg).unwrap();
        em_update(&mut st, &mut prior, &f, &y, &cfg);
        let want = y.norm_sqr() / (3.0 * f.q() as f64);
        assert!((st.sigma2 - want).abs() < 1e-12);
    }

    #[test]
    fn noise_update_at_truth_hits_floor() {
        let f = small_operator(8, 4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = CMat::from_fn(f.j(), 2, |_, _| complex_gaussian(&mut rng, 1.0));
        let y = f.apply_mat(&h);
        let cfg = SolverConfig { noise_update: NoiseUpdate::Residual, ..SolverConfig::default() };
        let (mut prior, mut st) = init_params(&y, &f, &cfg).unwrap();
        st.xi = h.clone();
        em_update(&mut st, &mut prior, &f, &y, &cfg);
        assert!(st.sigma2 < 1e-20 + VARIANCE_FLOOR);

        // the LE-side update at u = H with no error left
        let cfg = SolverConfig::default();
        let (mut prior, mut st) = init_params(&y, &f, &cfg).unwrap();
        st.u = h;
        st.v2 = RealMat::filled(st.groups.count(), 2, 0.0);
        em_update(&mut st, &mut prior, &f, &y, &cfg);
        assert!(st.sigma2 < 1e-20 + VARIANCE_FLOOR);
    }

    #[test]
    fn extrinsic_noise_update_fixed_point() {
        // ||y - F u||²/Q_g = v² + σ² on every group leaves σ² unchanged
        let f = small_operator(11, 4, 2);
        let cfg = SolverConfig::default();
        let y = CMat::zeros(f.q(), 1);
        let (mut prior, mut st) = init_params(&y, &f, &cfg).unwrap();
        let (v2, sigma2) = (0.3, 0.05);
        st.sigma2 = sigma2;
        st.v2 = RealMat::filled(st.groups.count(), 1, v2);
        // every row of y - F u gets energy v² + σ²
        let target = CMat::from_fn(f.q(), 1, |_, _| c((v2 + sigma2).sqrt(), 0.0));
        let y = target;
        em_update(&mut st, &mut prior, &f, &y, &cfg);
        assert!((st.sigma2 - sigma2).abs() < 1e-12);
    }

    #[test]
    fn residual_variance_matches_error_of_u() {
        // u = 0 and y = F h: the residual power per group is the power of h
        // seen through that panel's rows
        let f = small_operator(13, 4, 2);
        let (_, mut st) = init_params(&CMat::zeros(f.q(), 1), &f, &SolverConfig::default()).unwrap();
        st.sigma2 = 0.01;
        let y = CMat::from_fn(f.q(), 1, |_, _| c(0.3, 0.4));
        residual_variance(&mut st, &f, &y);
        assert!(st.v2.as_slice().iter().all(|v| (v - (0.25 - 0.01)).abs() < 1e-12));
        st.sigma2 = 1.0;
        residual_variance(&mut st, &f, &y);
        assert!(st.v2.as_slice().iter().all(|&v| v == VARIANCE_FLOOR));
    }

    #[test]
    fn damping_blends_outputs() {
        let f = small_operator(12, 4, 2);
        let y = CMat::zeros(f.q(), 1);
        let (_, mut st) = init_params(&y, &f, &SolverConfig::default()).unwrap();
        st.u = CMat::from_fn(f.j(), 1, |_, _| c(1.0, 0.0));
        st.v2 = RealMat::filled(st.groups.count(), 1, 1.0);
        let u_old = CMat::zeros(f.j(), 1);
        let v_old = RealMat::filled(st.groups.count(), 1, 0.5);
        damp(&mut st, &u_old, &v_old, 0.8);
        assert!(st.u.as_slice().iter().all(|z| (z - c(0.8, 0.0)).norm() < 1e-15));
        assert!(st.v2.as_slice().iter().all(|v| (v - 0.9).abs() < 1e-15));
        assert!(SolverConfig { damping: 0.0, ..SolverConfig::default() }.validate().is_err());
    }

    #[test]
    fn threshold_grid_is_monotone_in_delta() {
        let a = initial_sparsity(1, 4, ThresholdCurve::Standard);
        let b = initial_sparsity(1, 2, ThresholdCurve::Standard);
        assert!(0.0 < a && a < b && b < 0.5);
    }

    #[test]
    fn run_rejects_zero_budget() {
        let f = small_operator(9, 4, 2);
        let y = CMat::zeros(f.q(), 1);
        let cfg = SolverConfig { iterations: 0, ..Default::default() };
        assert!(matches!(run(&y, &f, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn zero_measurements_give_zero_estimate() {
        let f = small_operator(10, 8, 3);
        let y = CMat::zeros(f.q(), 2);
        let out = run(&y, &f, &SolverConfig::default()).unwrap();
        assert_eq!(out.h_hat.norm_sqr(), 0.0);
        assert!(out.eta.as_slice().iter().all(|&e| e < 1e-6));
        assert_eq!(out.trace.len(), 200);
    }

    #[test]
    fn trace_csv_header() {
        let rows = [TraceRow { iteration: 1, p: 0, tau2: 1.0, v2: 0.5, sigma2: 0.1, mean_lambda: 0.2 }];
        let mut buf = Vec::new();
        write_trace_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iteration,p,tau2,v2,sigma2,mean_lambda\n1,0,1.0,0.5,0.1,0.2"));
    }
}
