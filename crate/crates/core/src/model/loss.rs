use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// `−log softmax(logits)[label]`, log-sum-exp stabilized. `logits` is `classes × 1`.
pub fn cross_entropy(logits: &Matrix, label: usize) -> Result<f64> {
    check(logits, label)?;
    let z = logits.data();
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    Ok(lse - z[label])
}

/// Gradient of [`cross_entropy`] w.r.t. the logits: `softmax(z) − onehot(label)`.
pub fn cross_entropy_grad(logits: &Matrix, label: usize) -> Result<Matrix> {
    check(logits, label)?;
    let mut g = logits.transpose().softmax_rows().transpose();
    g.set(label, 0, g.get(label, 0) - 1.0);
    Ok(g)
}

fn check(logits: &Matrix, label: usize) -> Result<()> {
    if logits.cols() != 1 {
        return Err(Error::shape("cross_entropy", logits.shape(), (logits.rows(), 1)));
    }
    if label >= logits.rows() {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {} classes",
            logits.rows()
        )));
    }
    Ok(())
}
