//! Activity detectors on the solver output and the two trial metrics.
//!
//! Both detectors look at the first pilot subcarrier only (all subcarriers
//! share one support) and score each user over its own `N_BS` coefficients.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::array::ActivityPattern;
use crate::cmat::{CMat, RealMat};
use crate::error::{Error, Result};

/// NMSE value reported for an exact estimate.
pub const NMSE_FLOOR_DB: f64 = -300.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    /// Channel-gain threshold as a fraction of the largest `|ĥ|`.
    pub cg_relative_threshold: f64,
    pub cg_fraction: f64,
    pub bi_threshold: f64,
    pub bi_fraction: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            cg_relative_threshold: 0.01,
            cg_fraction: 0.9,
            bi_threshold: 0.5,
            bi_fraction: 0.5,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(unit(self.cg_relative_threshold) && unit(self.cg_fraction) && unit(self.bi_fraction)) {
            return Err(Error::Config("detector fractions must lie in [0, 1]".into()));
        }
        if !(self.bi_threshold > 0.0 && self.bi_threshold < 1.0) {
            return Err(Error::Config("belief threshold must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub activity: ActivityPattern,
    /// Fraction of each user's coefficients above threshold.
    pub scores: Vec<f64>,
}

/// `1` iff `|x| > ε`.
pub fn threshold_fn(x: Complex64, eps: f64) -> u8 {
    u8::from(x.norm() > eps)
}

fn score_blocks(values: impl ExactSizeIterator<Item = bool>, n_bs: usize, fraction: f64) -> DetectionResult {
    let flags: Vec<bool> = values.collect();
    let scores: Vec<f64> = flags
        .chunks_exact(n_bs)
        .map(|b| b.iter().filter(|&&x| x).count() as f64 / n_bs as f64)
        .collect();
    let activity = ActivityPattern::from_flags(scores.iter().map(|&s| s >= fraction).collect());
    DetectionResult { activity, scores }
}

fn check_blocks(len: usize, n_bs: usize) -> Result<()> {
    if n_bs == 0 || !len.is_multiple_of(n_bs) {
        return Err(Error::Dimension(format!("{len} coefficients do not split into blocks of {n_bs}")));
    }
    Ok(())
}

/// Channel-gain detector on column `p = 0` of `Ĥ`.
pub fn cg_ad(h_hat: &CMat, n_bs: usize, cfg: &DetectorConfig) -> Result<DetectionResult> {
    let slice = h_hat.col(0);
    check_blocks(slice.len(), n_bs)?;
    let peak = slice.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let eps = cfg.cg_relative_threshold * peak;
    Ok(score_blocks(
        slice.iter().map(|&z| threshold_fn(z, eps) == 1),
        n_bs,
        cfg.cg_fraction,
    ))
}

/// Belief-indicator detector on column `p = 0` of `η`.
pub fn bi_ad(eta: &RealMat, n_bs: usize, cfg: &DetectorConfig) -> Result<DetectionResult> {
    let slice = eta.col(0);
    check_blocks(slice.len(), n_bs)?;
    Ok(score_blocks(
        slice.iter().map(|&e| threshold_fn(Complex64::new(e, 0.0), cfg.bi_threshold) == 1),
        n_bs,
        cfg.bi_fraction,
    ))
}

/// Normalized Hamming distance between detected and true activity.
pub fn aud_error_prob(detected: &ActivityPattern, truth: &ActivityPattern) -> Result<f64> {
    if detected.len() != truth.len() || truth.is_empty() {
        return Err(Error::Dimension(format!(
            "activity lengths {} and {}",
            detected.len(),
            truth.len()
        )));
    }
    let wrong = detected
        .flags()
        .iter()
        .zip(truth.flags())
        .filter(|(a, b)| a != b)
        .count();
    Ok(wrong as f64 / truth.len() as f64)
}

/// Which coefficients enter the NMSE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NmseMode {
    /// Rows of truly active users, ratio of totals over all subcarriers.
    #[default]
    ActiveRows,
    /// Every row of every subcarrier.
    FullMatrix,
    /// Rows of active users, ratio per subcarrier, then averaged.
    PerSubcarrier,
}

fn to_db(ratio: f64) -> f64 {
    if ratio <= 0.0 {
        NMSE_FLOOR_DB
    } else {
        (10.0 * ratio.log10()).max(NMSE_FLOOR_DB)
    }
}

/// Normalized MSE in dB.
pub fn nmse(h_hat: &CMat, h: &CMat, truth: &ActivityPattern, n_bs: usize, mode: NmseMode) -> Result<f64> {
    if h_hat.shape() != h.shape() {
        return Err(Error::Dimension(format!("{:?} vs {:?}", h_hat.shape(), h.shape())));
    }
    if h.rows() != truth.len() * n_bs {
        return Err(Error::Dimension(format!(
            "{} rows for {} users of {n_bs} antennas",
            h.rows(),
            truth.len()
        )));
    }
    let rows: Vec<usize> = match mode {
        NmseMode::FullMatrix => (0..h.rows()).collect(),
        _ => truth
            .active_users()
            .into_iter()
            .flat_map(|k| k * n_bs..(k + 1) * n_bs)
            .collect(),
    };
    let column = |p: usize| -> (f64, f64) {
        let (a, b) = (h_hat.col(p), h.col(p));
        rows.iter()
            .map(|&r| ((a[r] - b[r]).norm_sqr(), b[r].norm_sqr()))
            .fold((0.0, 0.0), |acc, x| (acc.0 + x.0, acc.1 + x.1))
    };
    match mode {
        NmseMode::PerSubcarrier => {
            let mut acc = 0.0;
            for p in 0..h.cols() {
                let (err, refp) = column(p);
                if refp == 0.0 {
                    return Err(Error::ZeroReference);
                }
                acc += err / refp;
            }
            Ok(to_db(acc / h.cols() as f64))
        }
        _ => {
            let (err, refp) = (0..h.cols())
                .map(column)
                .fold((0.0, 0.0), |acc, x| (acc.0 + x.0, acc.1 + x.1));
            if refp == 0.0 {
                return Err(Error::ZeroReference);
            }
            Ok(to_db(err / refp))
        }
    }
}
