use crate::error::{Error, Result};
use crate::numerics::Matrix;

use super::TrainConfig;

/// First and second moment estimates, one pair per parameter matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl AdamState {
    pub fn new(params: &[Matrix]) -> Self {
        let zeros: Vec<Matrix> = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update at step `t` (1-based).
pub fn adam_step(
    params: &mut [Matrix],
    grads: &[Matrix],
    state: &mut AdamState,
    t: u64,
    cfg: &TrainConfig,
) -> Result<()> {
    if t == 0 {
        return Err(Error::InvalidArgument("adam step counter starts at 1".into()));
    }
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(Error::InvalidArgument(format!(
            "adam: {} parameters, {} gradients, {} moment pairs",
            params.len(),
            grads.len(),
            state.m.len().min(state.v.len())
        )));
    }
    for (i, ((p, g), (m, v))) in params.iter().zip(grads).zip(state.m.iter().zip(&state.v)).enumerate() {
        if p.shape() != g.shape() || p.shape() != m.shape() || p.shape() != v.shape() {
            return Err(Error::InvalidArgument(format!(
                "adam: parameter {i} has shape {:?}, gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powf(t as f64);
    let c2 = 1.0 - b2.powf(t as f64);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
        for (j, &gj) in g.data().iter().enumerate() {
            md[j] = b1 * md[j] + (1.0 - b1) * gj;
            vd[j] = b2 * vd[j] + (1.0 - b2) * gj * gj;
            let m_hat = md[j] / c1;
            let v_hat = vd[j] / c2;
            pd[j] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    }
    Ok(())
}
