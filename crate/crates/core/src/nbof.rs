//! Neural Bag-of-Features: RBF codebook quantization and temporal averaging.
//!
//! A feature sequence `X ∈ R^{D×N}` is soft-assigned to `K` codewords:
//!
//! ```text
//! φ_{n,k} = exp(−‖(x_n − v_k) ⊙ w_k‖₂) / Σ_m exp(−‖(x_n − v_m) ⊙ w_m‖₂)
//! ```
//!
//! and the resulting `K×N` membership matrix is averaged over time into a
//! `K`-bin histogram. The kernel widths `w` are stored unconstrained and
//! mapped through softplus so they stay positive.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ops::{expect_arity, mean_cols_vjp};
use crate::numerics::{sigmoid, softplus, softplus_inv, DiffOp, Matrix};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    /// Codewords, one per row (`K×D`).
    pub v: Matrix,
    /// Unconstrained kernel-shape parameters; `w = softplus(w_raw)`.
    pub w_raw: Matrix,
}

impl Codebook {
    pub fn new(v: Matrix, w_raw: Matrix) -> Result<Self> {
        if v.shape() != w_raw.shape() {
            return Err(Error::shape("codebook", v.shape(), w_raw.shape()));
        }
        if v.rows() == 0 || v.cols() == 0 {
            return Err(Error::InvalidArgument(
                "codebook needs K >= 1 and D >= 1".into(),
            ));
        }
        Ok(Codebook { v, w_raw })
    }

    /// Builds a codebook from positive kernel weights.
    pub fn with_weights(v: Matrix, w: &Matrix) -> Result<Self> {
        if w.data().iter().any(|x| x.is_nan() || *x <= 0.0) {
            return Err(Error::InvalidArgument("kernel weights must be > 0".into()));
        }
        Codebook::new(v, w.map(softplus_inv))
    }

    pub fn codewords(&self) -> usize {
        self.v.rows()
    }

    pub fn dim(&self) -> usize {
        self.v.cols()
    }

    /// Positive kernel weights `w = softplus(w_raw)`.
    pub fn weights(&self) -> Matrix {
        self.w_raw.map(softplus)
    }
}

/// Cached intermediates of [`quantize_forward`].
#[derive(Debug, Clone)]
pub struct Quantized {
    /// `K×N` memberships; every column is on the probability simplex.
    pub phi: Matrix,
    /// `K×N` weighted distances `‖(x_n − v_k) ⊙ w_k‖₂`.
    distances: Matrix,
    weights: Matrix,
}

#[derive(Debug, Clone)]
pub struct QuantizeGrads {
    pub x: Matrix,
    pub v: Matrix,
    pub w_raw: Matrix,
}

/// Soft-assigns every column of `x` (`D×N`) to the codebook; returns `Φ` (`K×N`).
pub fn quantize(x: &Matrix, cb: &Codebook) -> Result<Matrix> {
    Ok(quantize_forward(x, cb)?.phi)
}

pub fn quantize_forward(x: &Matrix, cb: &Codebook) -> Result<Quantized> {
    if x.rows() != cb.dim() {
        return Err(Error::shape("quantize", x.shape(), cb.v.shape()));
    }
    let (k, n, dim) = (cb.codewords(), x.cols(), cb.dim());
    let weights = cb.weights();
    let mut distances = Matrix::zeros(k, n);
    for c in 0..k {
        let (vk, wk) = (cb.v.row(c), weights.row(c));
        for t in 0..n {
            let mut acc = 0.0;
            for f in 0..dim {
                let u = (x.get(f, t) - vk[f]) * wk[f];
                acc += u * u;
            }
            distances.set(c, t, acc.sqrt());
        }
    }

    // exp(−d) normalized per column, shifted by the column minimum.
    let mut phi = Matrix::zeros(k, n);
    for t in 0..n {
        let min = (0..k).map(|c| distances.get(c, t)).fold(f64::INFINITY, f64::min);
        let mut total = 0.0;
        for c in 0..k {
            let e = (min - distances.get(c, t)).exp();
            phi.set(c, t, e);
            total += e;
        }
        for c in 0..k {
            phi.set(c, t, phi.get(c, t) / total);
        }
    }
    Ok(Quantized {
        phi,
        distances,
        weights,
    })
}

pub fn quantize_backward(
    x: &Matrix,
    cb: &Codebook,
    fwd: &Quantized,
    upstream: &Matrix,
) -> Result<QuantizeGrads> {
    if upstream.shape() != fwd.phi.shape() {
        return Err(Error::shape("quantize_backward", fwd.phi.shape(), upstream.shape()));
    }
    let (k, n, dim) = (cb.codewords(), x.cols(), cb.dim());
    let mut gx = Matrix::zeros(dim, n);
    let mut gv = Matrix::zeros(k, dim);
    let mut gw = Matrix::zeros(k, dim);
    for t in 0..n {
        let inner: f64 = (0..k).map(|c| fwd.phi.get(c, t) * upstream.get(c, t)).sum();
        for c in 0..k {
            // Logit is −d, so dL/dd = −φ (g − ⟨φ, g⟩).
            let g_dist = -fwd.phi.get(c, t) * (upstream.get(c, t) - inner);
            let dist = fwd.distances.get(c, t);
            if g_dist == 0.0 || dist == 0.0 {
                continue;
            }
            let coef = g_dist / dist;
            let (vk, wk) = (cb.v.row(c), fwd.weights.row(c));
            for f in 0..dim {
                let diff = x.get(f, t) - vk[f];
                let u = diff * wk[f];
                let gu = coef * u;
                let gxf = gu * wk[f];
                gx.set(f, t, gx.get(f, t) + gxf);
                gv.set(c, f, gv.get(c, f) - gxf);
                gw.set(c, f, gw.get(c, f) + gu * diff);
            }
        }
    }
    let w_raw = gw.zip_with(&cb.w_raw, "quantize_backward", |g, raw| g * sigmoid(raw))?;
    Ok(QuantizeGrads { x: gx, v: gv, w_raw })
}

/// Temporal average `y = (1/N) Σ_n φ_n` as a `K×1` vector.
pub fn aggregate(phi: &Matrix) -> Result<Matrix> {
    if phi.cols() == 0 {
        return Err(Error::EmptySequence("cannot aggregate a sequence of length 0"));
    }
    phi.mean_cols()
}

pub fn aggregate_backward(n: usize, upstream: &Matrix) -> Matrix {
    mean_cols_vjp(n, upstream)
}

/// Picks `k` distinct pooled feature columns as codewords; widths start at 1.
pub fn init_codebook(samples: &[Matrix], k: usize, seed: u64) -> Result<Codebook> {
    let Some(first) = samples.first() else {
        return Err(Error::InvalidArgument("no samples to initialize the codebook from".into()));
    };
    let dim = first.rows();
    if let Some(bad) = samples.iter().find(|s| s.rows() != dim) {
        return Err(Error::shape("init_codebook", first.shape(), bad.shape()));
    }
    let pool: Vec<(usize, usize)> = samples
        .iter()
        .enumerate()
        .flat_map(|(i, s)| (0..s.cols()).map(move |t| (i, t)))
        .collect();
    if pool.len() < k || k == 0 {
        return Err(Error::InvalidArgument(format!(
            "need at least K={k} pooled columns to initialize the codebook, have {}",
            pool.len()
        )));
    }
    let mut r = rng::seeded(seed);
    let picks = index::sample(&mut r, pool.len(), k);
    let mut v = Matrix::zeros(k, dim);
    for (row, p) in picks.iter().enumerate() {
        let (i, t) = pool[p];
        for f in 0..dim {
            v.set(row, f, samples[i].get(f, t));
        }
    }
    let w_raw = Matrix::filled(k, dim, softplus_inv(1.0));
    Codebook::new(v, w_raw)
}

/// [`quantize`] as a [`DiffOp`] over `[x, v, w_raw]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuantizeOp;

impl DiffOp for QuantizeOp {
    fn name(&self) -> &str {
        "quantize"
    }

    fn forward(&self, inputs: &[Matrix]) -> Result<Matrix> {
        expect_arity(self.name(), inputs, 3)?;
        let cb = Codebook::new(inputs[1].clone(), inputs[2].clone())?;
        quantize(&inputs[0], &cb)
    }

    fn vjp(&self, inputs: &[Matrix], _output: &Matrix, upstream: &Matrix) -> Result<Vec<Matrix>> {
        let cb = Codebook::new(inputs[1].clone(), inputs[2].clone())?;
        let fwd = quantize_forward(&inputs[0], &cb)?;
        let g = quantize_backward(&inputs[0], &cb, &fwd, upstream)?;
        Ok(vec![g.x, g.v, g.w_raw])
    }
}

/// [`aggregate`] as a [`DiffOp`].
#[derive(Debug, Clone, Copy, Default)]
pub struct AggregateOp;

impl DiffOp for AggregateOp {
    fn name(&self) -> &str {
        "aggregate"
    }

    fn forward(&self, inputs: &[Matrix]) -> Result<Matrix> {
        expect_arity(self.name(), inputs, 1)?;
        aggregate(&inputs[0])
    }

    fn vjp(&self, inputs: &[Matrix], _output: &Matrix, upstream: &Matrix) -> Result<Vec<Matrix>> {
        Ok(vec![aggregate_backward(inputs[0].cols(), upstream)])
    }
}
