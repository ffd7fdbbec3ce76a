//! Central finite-difference check of a [`DiffOp`]'s VJP.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng;

use super::{DiffOp, Matrix};

/// Outcome of [`grad_check`].
///
/// Errors are relative per input: `max|analytic − numeric| / max(max|analytic|, max|numeric|, 1e-8)`.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub per_input: Vec<f64>,
    /// Set when the op produced NaN/Inf anywhere during the check.
    pub non_finite: bool,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        !self.non_finite && self.max_rel_err <= tolerance
    }
}

const DENOM_FLOOR: f64 = 1e-8;
const DEFAULT_PROJECTION_SEED: u64 = 0x6772_6164;

/// Checks `op` at `point` with the default projection seed.
pub fn grad_check(op: &dyn DiffOp, point: &[Matrix], eps: f64) -> Result<GradCheckReport> {
    grad_check_seeded(op, point, eps, DEFAULT_PROJECTION_SEED)
}

/// Compares the VJP of `L = Σ R ⊙ op(point)` against central differences,
/// where `R` is a random projection drawn from `seed`.
pub fn grad_check_seeded(
    op: &dyn DiffOp,
    point: &[Matrix],
    eps: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidArgument(format!("grad_check eps must be > 0, got {eps}")));
    }
    let output = op.forward(point)?;
    let mut r = rng::seeded(seed);
    let projection = rng::uniform_matrix(&mut r, output.rows(), output.cols(), 1.0);
    let analytic = op.vjp(point, &output, &projection)?;
    if analytic.len() != point.len() {
        return Err(Error::InvalidArgument(format!(
            "{}: vjp returned {} cotangents for {} inputs",
            op.name(),
            analytic.len(),
            point.len()
        )));
    }

    let mut non_finite = !output.is_finite() || analytic.iter().any(|g| !g.is_finite());
    let scalar = |inputs: &[Matrix]| -> Result<f64> {
        let out = op.forward(inputs)?;
        Ok(out.hadamard(&projection)?.sum())
    };

    let mut inputs = point.to_vec();
    let mut per_input = Vec::with_capacity(point.len());
    for (idx, grad) in analytic.iter().enumerate() {
        if grad.shape() != point[idx].shape() {
            return Err(Error::shape("grad_check", point[idx].shape(), grad.shape()));
        }
        let mut worst_diff: f64 = 0.0;
        let mut scale = DENOM_FLOOR;
        for j in 0..point[idx].len() {
            let orig = point[idx].data()[j];
            inputs[idx].data_mut()[j] = orig + eps;
            let plus = scalar(&inputs)?;
            inputs[idx].data_mut()[j] = orig - eps;
            let minus = scalar(&inputs)?;
            inputs[idx].data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.data()[j];
            if !numeric.is_finite() {
                non_finite = true;
            }
            worst_diff = worst_diff.max((a - numeric).abs());
            scale = scale.max(a.abs()).max(numeric.abs());
        }
        per_input.push(worst_diff / scale);
    }

    let max_rel_err = if non_finite {
        f64::INFINITY
    } else {
        per_input.iter().copied().fold(0.0, f64::max)
    };
    Ok(GradCheckReport {
        max_rel_err,
        per_input,
        non_finite,
    })
}
