use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng;

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    Ok(())
}

/// Inverted-dropout mask: entries are `0` with probability `rate`, else `1/(1−rate)`.
pub fn dropout_mask(rows: usize, cols: usize, rate: f64, seed: u64) -> Result<Matrix> {
    check_rate(rate)?;
    let keep = 1.0 / (1.0 - rate);
    let mut r = rng::seeded(seed);
    Ok(Matrix::from_fn(rows, cols, |_, _| {
        if r.random::<f64>() < rate {
            0.0
        } else {
            keep
        }
    }))
}

/// Dropout on an attention matrix. Identity in eval mode or at `rate == 0`.
pub fn attention_dropout(a: &Matrix, rate: f64, training: bool, seed: u64) -> Result<Matrix> {
    check_rate(rate)?;
    if !training || rate == 0.0 {
        return Ok(a.clone());
    }
    a.hadamard(&dropout_mask(a.rows(), a.cols(), rate, seed)?)
}
