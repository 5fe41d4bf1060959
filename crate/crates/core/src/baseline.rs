//! Simultaneous orthogonal matching pursuit (SOMP) over all subcarriers, used
//! as a greedy reference for the message-passing solver.
//!
//! Columns of `F` that feed different RF chains never share a row, so the
//! least-squares refit splits into one small Hermitian system per panel.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cmat::CMat;
use crate::error::{Error, Result};
use crate::frontend::SensingOperator;

const RIDGE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    /// Add a whole user block of `N_BS` columns per iteration.
    Block,
    /// Add one column per iteration.
    Row,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreedyConfig {
    /// Maximum number of selected columns of `F`.
    pub max_support: usize,
    /// Stop once `||R||_F / ||Y||_F` drops to this value.
    pub residual_tolerance: f64,
    pub selection: Selection,
}

impl GreedyConfig {
    /// Block-aware search for up to `blocks` users.
    pub fn blocks(blocks: usize, n_bs: usize) -> Self {
        Self {
            max_support: blocks * n_bs,
            residual_tolerance: 1e-6,
            selection: Selection::Block,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GreedyOutput {
    pub h_hat: CMat,
    /// Selected columns of `F`, in selection order.
    pub support: Vec<usize>,
    /// `||R||_F` after each refit, starting with `||Y||_F`.
    pub residual_norms: Vec<f64>,
    /// Some refit needed the ridge term.
    pub regularized: bool,
}

impl GreedyOutput {
    pub fn iterations(&self) -> usize {
        self.residual_norms.len() - 1
    }
}

pub fn somp(y: &CMat, f: &SensingOperator, cfg: &GreedyConfig) -> Result<GreedyOutput> {
    if y.rows() != f.q() {
        return Err(Error::Dimension(format!("Y has {} rows, F has {}", y.rows(), f.q())));
    }
    if cfg.max_support > f.q() {
        return Err(Error::Config(format!(
            "support limit {} exceeds the {} measurements",
            cfg.max_support,
            f.q()
        )));
    }
    let n_bs = f.geometry().n_bs();
    let unit = match cfg.selection {
        Selection::Block => n_bs,
        Selection::Row => 1,
    };
    let y_norm = y.norm_sqr().sqrt();
    let mut out = GreedyOutput {
        h_hat: CMat::zeros(f.j(), y.cols()),
        support: Vec::new(),
        residual_norms: vec![y_norm],
        regularized: false,
    };
    if y_norm == 0.0 {
        return Ok(out);
    }

    let mut chosen = vec![false; f.j() / unit];
    let mut resid = y.clone();
    while out.support.len() + unit <= cfg.max_support {
        let corr = f.apply_adjoint_mat(&resid);
        let mut scores = vec![0.0; chosen.len()];
        for p in 0..corr.cols() {
            for (j, z) in corr.col(p).iter().enumerate() {
                scores[j / unit] += z.norm();
            }
        }
        let best = scores
            .iter()
            .enumerate()
            .filter(|(i, _)| !chosen[*i])
            .max_by(|a, b| a.1.total_cmp(b.1));
        let Some((pick, &score)) = best else { break };
        if score <= 0.0 {
            break;
        }
        chosen[pick] = true;
        out.support.extend(pick * unit..(pick + 1) * unit);

        out.regularized |= refit(y, f, &out.support, &mut out.h_hat);
        resid = y.sub(&f.apply_mat(&out.h_hat))?;
        let r = resid.norm_sqr().sqrt();
        out.residual_norms.push(r);
        if r <= cfg.residual_tolerance * y_norm {
            break;
        }
    }
    Ok(out)
}

/// Least squares of every column of `Y` on the selected columns of `F`.
/// Returns whether the ridge was needed.
fn refit(y: &CMat, f: &SensingOperator, support: &[usize], h_hat: &mut CMat) -> bool {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &j in support {
        groups.entry(f.column_panel(j)).or_default().push(j);
    }
    for z in h_hat.as_mut_slice() {
        *z = Complex64::new(0.0, 0.0);
    }
    let mut regularized = false;
    let g = f.symbols();
    for cols in groups.values() {
        let n = cols.len();
        // all columns in a group share the same G rows
        let entries: Vec<_> = cols.iter().map(|&j| f.column(j)).collect();
        let rows = &entries[0].rows;
        let gram = DMatrix::from_fn(n, n, |a, b| {
            (0..g)
                .map(|t| entries[a].values[t].conj() * entries[b].values[t])
                .sum::<Complex64>()
        });
        let rhs = DMatrix::from_fn(n, y.cols(), |a, p| {
            rows.iter()
                .zip(&entries[a].values)
                .map(|(&r, v)| v.conj() * y[(r, p)])
                .sum::<Complex64>()
        });
        let plain = if n <= g { gram.clone().cholesky() } else { None };
        let chol = match plain {
            Some(c) => c,
            None => {
                regularized = true;
                let scale = (0..n).map(|i| gram[(i, i)].re).sum::<f64>() / n as f64;
                let ridge = RIDGE * scale.max(f64::MIN_POSITIVE);
                let mut reg = gram;
                for i in 0..n {
                    reg[(i, i)] += Complex64::new(ridge, 0.0);
                }
                match reg.cholesky() {
                    Some(c) => c,
                    None => continue,
                }
            }
        };
        let sol = chol.solve(&rhs);
        for (a, &j) in cols.iter().enumerate() {
            for p in 0..y.cols() {
                h_hat[(j, p)] = sol[(a, p)];
            }
        }
    }
    regularized
}
