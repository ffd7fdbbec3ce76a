//! Attention heatmap export: `head{n}.csv` (17 significant digits) and
//! `head{n}.pgm` (binary greyscale, min-max scaled) per matrix.

use std::path::{Path, PathBuf};

use crate::container::write_atomic;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub fn matrix_to_csv(m: &Matrix) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for i in 0..m.rows() {
        w.write_record(m.row(i).iter().map(|v| format!("{v:.16e}")))
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

/// `P5` image, one byte per entry; a constant matrix maps to black.
pub fn matrix_to_pgm(m: &Matrix) -> Vec<u8> {
    let (lo, hi) = m
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    let mut out = format!("P5\n{} {}\n255\n", m.cols(), m.rows()).into_bytes();
    out.extend(m.data().iter().map(|&v| {
        if span > 0.0 {
            (255.0 * (v - lo) / span).round() as u8
        } else {
            0
        }
    }));
    out
}

/// Writes one CSV and one PGM per matrix into `dir` (created if missing).
pub fn export_attention(matrices: &[Matrix], dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::with_capacity(2 * matrices.len());
    for (n, m) in matrices.iter().enumerate() {
        let csv_path = dir.join(format!("head{n}.csv"));
        write_atomic(&csv_path, &matrix_to_csv(m)?)?;
        let pgm_path = dir.join(format!("head{n}.pgm"));
        write_atomic(&pgm_path, &matrix_to_pgm(m))?;
        written.push(csv_path);
        written.push(pgm_path);
    }
    Ok(written)
}
