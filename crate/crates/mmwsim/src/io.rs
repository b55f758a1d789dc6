//! On-disk formats: a raw binary complex-matrix dump and small CSV helpers.
//!
//! The binary layout is two little-endian `u64` dimensions (rows, cols)
//! followed by the entries in row-major order, each entry a little-endian
//! `f64` pair (real part, then imaginary part).

use crate::error::Result;
use nalgebra::DMatrix;
use num_complex::Complex64;
use std::io::{Read, Write};
use std::path::Path;

/// Write a complex matrix in the raw binary layout.
pub fn write_complex_matrix(path: &Path, m: &DMatrix<Complex64>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&(m.nrows() as u64).to_le_bytes())?;
    f.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            f.write_all(&m[(r, c)].re.to_le_bytes())?;
            f.write_all(&m[(r, c)].im.to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

/// Read a complex matrix written by [`write_complex_matrix`].
pub fn read_complex_matrix(path: &Path) -> Result<DMatrix<Complex64>> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut b8 = [0u8; 8];
    f.read_exact(&mut b8)?;
    let rows = u64::from_le_bytes(b8) as usize;
    f.read_exact(&mut b8)?;
    let cols = u64::from_le_bytes(b8) as usize;
    let mut m = DMatrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            f.read_exact(&mut b8)?;
            let re = f64::from_le_bytes(b8);
            f.read_exact(&mut b8)?;
            let im = f64::from_le_bytes(b8);
            m[(r, c)] = Complex64::new(re, im);
        }
    }
    Ok(m)
}

/// Write a CSV table: one header row then one row per record.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{}", header.join(","))?;
    for row in rows {
        writeln!(f, "{}", row.join(","))?;
    }
    f.flush()?;
    Ok(())
}

/// Format a float for CSV output with enough digits to round-trip (Rust's
/// shortest exact representation).
pub fn fmt_f64(x: f64) -> String {
    format!("{x:e}")
}
