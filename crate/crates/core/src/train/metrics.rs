use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_lengths(preds: &[usize], labels: &[usize]) -> Result<()> {
    if preds.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::EmptySequence("predictions"));
    }
    Ok(())
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths(preds, labels)?;
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Unweighted mean of per-class F1 over classes present in labels or predictions.
pub fn macro_f1(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths(preds, labels)?;
    let classes = preds.iter().chain(labels).max().copied().unwrap_or(0) + 1;
    let (mut tp, mut fp, mut fnn) = (vec![0usize; classes], vec![0usize; classes], vec![0usize; classes]);
    for (&p, &l) in preds.iter().zip(labels) {
        if p == l {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fnn[l] += 1;
        }
    }
    let mut total = 0.0;
    let mut present = 0;
    for c in 0..classes {
        if tp[c] + fp[c] + fnn[c] == 0 {
            continue;
        }
        present += 1;
        total += 2.0 * tp[c] as f64 / (2 * tp[c] + fp[c] + fnn[c]) as f64;
    }
    Ok(total / present as f64)
}

/// Mean and sample standard deviation (`n − 1` denominator; 0 for one value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        let n = values.len();
        if n == 0 {
            return Summary {
                mean: f64::NAN,
                std: f64::NAN,
                n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Summary { mean, std, n }
    }
}
