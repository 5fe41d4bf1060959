//! Little-endian binary dump of dense complex matrices.
//!
//! Layout per matrix: `rows: u64`, `cols: u64`, then `rows * cols` entries in
//! column-major order, each as `re: f64`, `im: f64`. A problem dump is the
//! sensing matrix `F` followed by the measurements `Y`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::cmat::CMat;
use crate::error::{Error, Result};

pub fn write_matrix<W: Write>(m: &CMat, mut out: W) -> Result<()> {
    out.write_all(&(m.rows() as u64).to_le_bytes())?;
    out.write_all(&(m.cols() as u64).to_le_bytes())?;
    for z in m.as_slice() {
        out.write_all(&z.re.to_le_bytes())?;
        out.write_all(&z.im.to_le_bytes())?;
    }
    Ok(())
}

fn read_u64<R: Read>(input: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64<R: Read>(input: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

pub fn read_matrix<R: Read>(mut input: R) -> Result<CMat> {
    let rows = usize::try_from(read_u64(&mut input)?).map_err(|_| Error::Dimension("row count overflows".into()))?;
    let cols = usize::try_from(read_u64(&mut input)?).map_err(|_| Error::Dimension("column count overflows".into()))?;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Dimension(format!("{rows}x{cols} overflows")))?;
    let mut data = Vec::with_capacity(n.min(1 << 24));
    for _ in 0..n {
        let re = read_f64(&mut input)?;
        let im = read_f64(&mut input)?;
        data.push(Complex64::new(re, im));
    }
    CMat::from_col_major(rows, cols, data)
}

/// Write `F` then `Y` to `path`.
pub fn dump_problem(path: &Path, f: &CMat, y: &CMat) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_matrix(f, &mut out)?;
    write_matrix(y, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn load_problem(path: &Path) -> Result<(CMat, CMat)> {
    let mut input = BufReader::new(File::open(path)?);
    let f = read_matrix(&mut input)?;
    let y = read_matrix(&mut input)?;
    Ok((f, y))
}
