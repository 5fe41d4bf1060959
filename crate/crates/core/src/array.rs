//! Multi-panel array response, per-user multipath channel synthesis and the
//! sparse activity pattern.
//!
//! Antenna indexing follows `vec[A]` with `A = a_h a_v^T`: antenna
//! `(n_h, n_v)` lives at flat index `n_v * N_h + n_h`, so the full response is
//! `a_v ⊗ a_h`. Panel `(i_h, i_v)` is numbered `i_v * I_h + i_h`.

use std::f64::consts::PI;
use std::str::FromStr;

use num_complex::Complex64;
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cmat::{kron, CMat};
use crate::error::{Error, Result};

/// Dimensions of a rectangular array built from `I_h x I_v` uniform planar
/// panels of `M_h x M_v` half-wavelength-spaced elements. Adjacent panels are
/// separated by `D` element spacings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub i_h: usize,
    pub i_v: usize,
    pub m_h: usize,
    pub m_v: usize,
    pub d: usize,
}

impl ArrayGeometry {
    pub fn new(i_h: usize, i_v: usize, m_h: usize, m_v: usize, d: usize) -> Result<Self> {
        let g = Self { i_h, i_v, m_h, m_v, d };
        g.validate()?;
        Ok(g)
    }

    /// Gap-free uniform planar array (`D = 1`). Not a physical multi-panel
    /// layout; useful as a reference where every element sits on the `d` grid.
    pub fn contiguous(i_h: usize, i_v: usize, m_h: usize, m_v: usize) -> Self {
        Self { i_h, i_v, m_h, m_v, d: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.i_h, self.i_v, self.m_h, self.m_v].contains(&0) {
            return Err(Error::Geometry("panel and element counts must be >= 1".into()));
        }
        if self.d < 2 {
            return Err(Error::Geometry(format!(
                "panel spacing multiple D must be >= 2, got {}",
                self.d
            )));
        }
        Ok(())
    }

    /// The 4x4 panels of 2x2 elements with `D = 6` used throughout the
    /// experiments (64 antennas, 16 RF chains).
    pub fn reference() -> Self {
        Self { i_h: 4, i_v: 4, m_h: 2, m_v: 2, d: 6 }
    }

    pub fn n_h(&self) -> usize {
        self.i_h * self.m_h
    }

    pub fn n_v(&self) -> usize {
        self.i_v * self.m_v
    }

    /// Total antennas `N_BS`.
    pub fn n_bs(&self) -> usize {
        self.n_h() * self.n_v()
    }

    /// Antennas per panel `M_BS`.
    pub fn m_bs(&self) -> usize {
        self.m_h * self.m_v
    }

    /// Panel (RF chain) count `N_P`.
    pub fn n_p(&self) -> usize {
        self.i_h * self.i_v
    }

    /// Panel that owns flat antenna index `n`.
    pub fn panel_of(&self, n: usize) -> usize {
        let n_h = n % self.n_h();
        let n_v = n / self.n_h();
        (n_v / self.m_v) * self.i_h + n_h / self.m_h
    }

    /// Ordered antenna index set of panel `np`.
    pub fn panel_antennas(&self, np: usize) -> Vec<usize> {
        let (pi_h, pi_v) = (np % self.i_h, np / self.i_h);
        let mut out = Vec::with_capacity(self.m_bs());
        for mv in 0..self.m_v {
            for mh in 0..self.m_h {
                let n_h = pi_h * self.m_h + mh;
                let n_v = pi_v * self.m_v + mv;
                out.push(n_v * self.n_h() + n_h);
            }
        }
        out
    }
}

/// OFDM numerology. Only the pilot subcarrier frequencies enter the channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OfdmConfig {
    pub bandwidth_hz: f64,
    pub subcarriers: usize,
    pub pilots: usize,
    pub carrier_hz: f64,
}

impl OfdmConfig {
    pub fn new(bandwidth_hz: f64, subcarriers: usize, pilots: usize, carrier_hz: f64) -> Result<Self> {
        let o = Self { bandwidth_hz, subcarriers, pilots, carrier_hz };
        o.validate()?;
        Ok(o)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pilots == 0 {
            return Err(Error::Ofdm("need at least one pilot subcarrier".into()));
        }
        if !self.subcarriers.is_multiple_of(self.pilots) {
            return Err(Error::Ofdm(format!(
                "N_c = {} is not a multiple of P = {}",
                self.subcarriers, self.pilots
            )));
        }
        if !(self.bandwidth_hz > 0.0 && self.bandwidth_hz.is_finite()) {
            return Err(Error::Ofdm("bandwidth must be positive".into()));
        }
        Ok(())
    }

    /// Baseband frequency of pilot subcarrier `p` (1-based):
    /// `-B_s/2 + (p N_c / P - 1) B_s / N_c`.
    pub fn pilot_frequency(&self, p: usize) -> f64 {
        let nc = self.subcarriers as f64;
        let spacing = (self.subcarriers / self.pilots) as f64;
        -self.bandwidth_hz / 2.0 + (p as f64 * spacing - 1.0) * self.bandwidth_hz / nc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SteeringKind {
    HorizontalPanel,
    HorizontalElement,
    VerticalPanel,
    VerticalElement,
}

impl FromStr for SteeringKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "h-panel" => Ok(Self::HorizontalPanel),
            "h-element" => Ok(Self::HorizontalElement),
            "v-panel" => Ok(Self::VerticalPanel),
            "v-element" => Ok(Self::VerticalElement),
            other => Err(Error::Config(format!("unknown steering factor kind `{other}`"))),
        }
    }
}

fn phase_ramp(len: usize, stride: f64) -> Vec<Complex64> {
    (0..len)
        .map(|i| Complex64::from_polar(1.0, i as f64 * stride))
        .collect()
}

/// One of the four Kronecker factors of the multi-panel response.
///
/// Panel factors advance by `(M + D - 1)` element spacings per panel, element
/// factors by one.
pub fn steering_factor(kind: SteeringKind, angle: f64, geom: &ArrayGeometry) -> Vec<Complex64> {
    let d = geom.d as f64;
    match kind {
        SteeringKind::HorizontalPanel => {
            phase_ramp(geom.i_h, (geom.m_h as f64 + d - 1.0) * angle)
        }
        SteeringKind::HorizontalElement => phase_ramp(geom.m_h, angle),
        SteeringKind::VerticalPanel => phase_ramp(geom.i_v, (geom.m_v as f64 + d - 1.0) * angle),
        SteeringKind::VerticalElement => phase_ramp(geom.m_v, angle),
    }
}

/// Horizontal steering vector `a_h(μ) = a_h^I ⊗ a_h^M`.
pub fn horizontal_response(mu: f64, geom: &ArrayGeometry) -> Vec<Complex64> {
    kron(
        &steering_factor(SteeringKind::HorizontalPanel, mu, geom),
        &steering_factor(SteeringKind::HorizontalElement, mu, geom),
    )
}

/// Vertical steering vector `a_v(ν) = a_v^I ⊗ a_v^M`.
pub fn vertical_response(nu: f64, geom: &ArrayGeometry) -> Vec<Complex64> {
    kron(
        &steering_factor(SteeringKind::VerticalPanel, nu, geom),
        &steering_factor(SteeringKind::VerticalElement, nu, geom),
    )
}

/// Full array response `a_MP(μ, ν) = a_v(ν) ⊗ a_h(μ)`, length `N_BS`.
pub fn multi_panel_response(mu: f64, nu: f64, geom: &ArrayGeometry) -> Vec<Complex64> {
    kron(&vertical_response(nu, geom), &horizontal_response(mu, geom))
}

/// A single propagation path. `mu`/`nu` are the virtual angles
/// `π sinθ cosφ` and `π sinφ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    pub gain: Complex64,
    pub mu: f64,
    pub nu: f64,
    pub delay_s: f64,
    pub azimuth: f64,
    pub elevation: f64,
}

impl Path {
    pub fn from_angles(gain: Complex64, azimuth: f64, elevation: f64, delay_s: f64) -> Self {
        Self {
            gain,
            mu: PI * azimuth.sin() * elevation.cos(),
            nu: PI * elevation.sin(),
            delay_s,
            azimuth,
            elevation,
        }
    }

    /// Path given directly in virtual angles; physical angles are left at 0.
    pub fn virtual_angles(gain: Complex64, mu: f64, nu: f64, delay_s: f64) -> Self {
        Self { gain, mu, nu, delay_s, azimuth: 0.0, elevation: 0.0 }
    }
}

pub type PathParams = Vec<Path>;

/// Distribution of the random multipath parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub paths: usize,
    /// Delays are uniform on `[0, max_delay_s]`.
    pub max_delay_s: f64,
}

impl ChannelModel {
    /// `L` paths with delays up to `32 / B_s`.
    pub fn reference(paths: usize, bandwidth_hz: f64) -> Self {
        Self { paths, max_delay_s: 32.0 / bandwidth_hz }
    }

    /// Gains `CN(0,1)`, azimuth and elevation uniform on `[-π/2, π/2)`.
    pub fn draw_paths<R: Rng + ?Sized>(&self, rng: &mut R) -> PathParams {
        (0..self.paths)
            .map(|_| {
                let gain = complex_gaussian(rng, 1.0);
                let azimuth = rng.random_range(-PI / 2.0..PI / 2.0);
                let elevation = rng.random_range(-PI / 2.0..PI / 2.0);
                let delay = rng.random::<f64>() * self.max_delay_s;
                Path::from_angles(gain, azimuth, elevation, delay)
            })
            .collect()
    }
}

/// Circularly-symmetric complex Gaussian with total variance `var`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(s * re, s * im)
}

/// Frequency-domain channel of one user at all `P` pilot subcarriers,
/// `N_BS x P`.
pub fn synth_user_channel(paths: &[Path], geom: &ArrayGeometry, ofdm: &OfdmConfig) -> CMat {
    let mut h = CMat::zeros(geom.n_bs(), ofdm.pilots);
    for path in paths {
        let a = multi_panel_response(path.mu, path.nu, geom);
        for p in 1..=ofdm.pilots {
            let phase = -2.0 * PI * path.delay_s * ofdm.pilot_frequency(p);
            let w = path.gain * Complex64::from_polar(1.0, phase);
            for (dst, &ai) in h.col_mut(p - 1).iter_mut().zip(&a) {
                *dst += w * ai;
            }
        }
    }
    h
}

/// Binary activity flags `α`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivityPattern {
    flags: Vec<bool>,
}

impl ActivityPattern {
    pub fn from_flags(flags: Vec<bool>) -> Self {
        Self { flags }
    }

    pub fn from_active(k: usize, active: &[usize]) -> Self {
        let mut flags = vec![false; k];
        for &a in active {
            flags[a] = true;
        }
        Self { flags }
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    /// Population `K`.
    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    /// Number of active users `K_a`.
    pub fn active_count(&self) -> usize {
        self.flags.iter().filter(|&&a| a).count()
    }

    pub fn active_users(&self) -> Vec<usize> {
        self.flags
            .iter()
            .enumerate()
            .filter_map(|(k, &a)| a.then_some(k))
            .collect()
    }

    pub fn is_active(&self, k: usize) -> bool {
        self.flags[k]
    }
}

/// Uniformly pick `k_a` of `k` users, without replacement.
pub fn draw_activity<R: Rng + ?Sized>(k: usize, k_a: usize, rng: &mut R) -> Result<ActivityPattern> {
    if k_a > k {
        return Err(Error::TooMany { requested: k_a, available: k });
    }
    let chosen = index::sample(rng, k, k_a).into_vec();
    Ok(ActivityPattern::from_active(k, &chosen))
}

/// Aggregated channel `H = [h_1, …, h_P]`, `J x P` with `J = K N_BS`.
/// Rows `k N_BS .. (k+1) N_BS` of every column belong to user `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    h: CMat,
    n_bs: usize,
}

impl ChannelMatrix {
    pub fn new(h: CMat, n_bs: usize) -> Result<Self> {
        if n_bs == 0 || !h.rows().is_multiple_of(n_bs) {
            return Err(Error::Dimension(format!(
                "{} rows do not split into blocks of {n_bs}",
                h.rows()
            )));
        }
        Ok(Self { h, n_bs })
    }

    pub fn matrix(&self) -> &CMat {
        &self.h
    }

    pub fn into_matrix(self) -> CMat {
        self.h
    }

    pub fn n_bs(&self) -> usize {
        self.n_bs
    }

    pub fn users(&self) -> usize {
        self.h.rows() / self.n_bs
    }

    pub fn subcarriers(&self) -> usize {
        self.h.cols()
    }

    /// Indices of nonzero entries of column `p`.
    pub fn support(&self, p: usize) -> Vec<usize> {
        self.h
            .col(p)
            .iter()
            .enumerate()
            .filter_map(|(j, z)| (z.norm_sqr() > 0.0).then_some(j))
            .collect()
    }
}

/// Stack per-user `N_BS x P` channels into `H`, zeroing inactive users.
pub fn build_channel_matrix(channels: &[CMat], activity: &ActivityPattern) -> Result<ChannelMatrix> {
    if channels.len() != activity.len() {
        return Err(Error::Dimension(format!(
            "{} user channels for a population of {}",
            channels.len(),
            activity.len()
        )));
    }
    let Some(first) = channels.first() else {
        return Err(Error::Dimension("empty user population".into()));
    };
    let (n_bs, p) = first.shape();
    if let Some((k, c)) = channels.iter().enumerate().find(|(_, c)| c.shape() != (n_bs, p)) {
        return Err(Error::Dimension(format!(
            "user {k} channel is {:?}, expected {:?}",
            c.shape(),
            (n_bs, p)
        )));
    }
    let j = channels.len() * n_bs;
    let mut h = CMat::zeros(j, p);
    for k in activity.active_users() {
        for col in 0..p {
            h.col_mut(col)[k * n_bs..(k + 1) * n_bs].copy_from_slice(channels[k].col(col));
        }
    }
    ChannelMatrix::new(h, n_bs)
}
