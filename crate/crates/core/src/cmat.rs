use std::ops::{Index, IndexMut};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Dense complex matrix stored column-major.
///
/// Columns are contiguous, which is what the solver wants: every per-subcarrier
/// vector `h_p`, `y_p`, `r_p` is one column.
#[derive(Debug, Clone, PartialEq)]
pub struct CMat {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn from_col_major(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} entries cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for c in 0..cols {
            for r in 0..rows {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Build from equally long column vectors.
    pub fn from_columns(rows: usize, columns: &[Vec<Complex64>]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * columns.len());
        for (i, c) in columns.iter().enumerate() {
            if c.len() != rows {
                return Err(Error::Dimension(format!(
                    "column {i} has length {}, expected {rows}",
                    c.len()
                )));
            }
            data.extend_from_slice(c);
        }
        Ok(Self {
            rows,
            cols: columns.len(),
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn col(&self, c: usize) -> &[Complex64] {
        &self.data[c * self.rows..(c + 1) * self.rows]
    }

    pub fn col_mut(&mut self, c: usize) -> &mut [Complex64] {
        &mut self.data[c * self.rows..(c + 1) * self.rows]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[Complex64]> {
        self.data.chunks_exact(self.rows.max(1)).take(self.cols)
    }

    pub fn columns_mut(&mut self) -> impl Iterator<Item = &mut [Complex64]> {
        let cols = self.cols;
        self.data.chunks_exact_mut(self.rows.max(1)).take(cols)
    }

    /// Squared Frobenius norm.
    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> CMat {
        CMat::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    /// Plain triple-loop product. Only meant for small dense checks.
    pub fn matmul(&self, other: &CMat) -> Result<CMat> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = CMat::zeros(self.rows, other.cols);
        for c in 0..other.cols {
            let b = other.col(c);
            let dst = out.col_mut(c);
            for (k, &bk) in b.iter().enumerate() {
                if bk == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for (d, &a) in dst.iter_mut().zip(self.col(k)) {
                    *d += a * bk;
                }
            }
        }
        Ok(out)
    }

    pub fn scale(&mut self, s: f64) {
        for z in &mut self.data {
            *z *= s;
        }
    }

    /// `self - other`, shapes must agree.
    pub fn sub(&self, other: &CMat) -> Result<CMat> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension(format!(
                "{:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(CMat {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }
}

impl Index<(usize, usize)> for CMat {
    type Output = Complex64;

    fn index(&self, (r, c): (usize, usize)) -> &Complex64 {
        &self.data[c * self.rows + r]
    }
}

impl IndexMut<(usize, usize)> for CMat {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex64 {
        &mut self.data[c * self.rows + r]
    }
}

/// Dense real matrix stored column-major; holds per-coefficient quantities
/// such as belief indicators and sparsity ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct RealMat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RealMat {
    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn col(&self, c: usize) -> &[f64] {
        &self.data[c * self.rows..(c + 1) * self.rows]
    }

    pub fn col_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.rows..(c + 1) * self.rows]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[c * self.rows + r]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[c * self.rows + r] = v;
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len().max(1) as f64
    }
}

/// `Σ conj(a_i) b_i`
pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm_sqr(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// Kronecker product of two vectors, `a ⊗ b`.
pub fn kron(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for &x in a {
        out.extend(b.iter().map(|&y| x * y));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn indexing_is_column_major() {
        let m = CMat::from_fn(2, 3, |r, c| Complex64::new((r * 10 + c) as f64, 0.0));
        assert_eq!(m.col(1), &[c(1.0, 0.0), c(11.0, 0.0)]);
        assert_eq!(m[(1, 2)], c(12.0, 0.0));
    }

    #[test]
    fn matmul_and_adjoint() {
        let a = CMat::from_fn(2, 2, |r, c| Complex64::new(r as f64, c as f64));
        let aha = a.adjoint().matmul(&a).unwrap();
        // A^H A is Hermitian
        assert!((aha[(0, 1)] - aha[(1, 0)].conj()).norm() < 1e-15);
        assert!(a.matmul(&CMat::zeros(3, 1)).is_err());
    }

    #[test]
    fn kron_order() {
        let a = [c(1.0, 0.0), c(2.0, 0.0)];
        let b = [c(1.0, 0.0), c(0.0, 1.0)];
        assert_eq!(kron(&a, &b), vec![c(1.0, 0.0), c(0.0, 1.0), c(2.0, 0.0), c(0.0, 2.0)]);
    }
}
