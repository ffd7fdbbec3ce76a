//! 2D-Attention baseline.
//!
//! With `P` the mode-oriented input (`Φ` for temporal, `Φᵀ` for codeword and
//! input modes):
//!
//! ```text
//! A = softmax_rows(P W)
//! P̃ = α (P ⊙ A) + (1 − α) P
//! ```
//!
//! `W` is square over the softmax axis and its diagonal is pinned to `1/C`
//! where `C` is that axis' length.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ops::{expect_arity, softmax_rows_vjp};
use crate::numerics::{logit, sigmoid, DiffOp, Matrix};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Att2DAMode {
    /// Applied to `Xᵀ` ahead of quantization.
    Input,
    /// Applied to `Φᵀ`; softmax runs across codewords.
    Codeword,
    /// Applied to `Φ`; softmax runs across timestamps.
    Temporal,
}

impl Att2DAMode {
    fn transposed(self) -> bool {
        !matches!(self, Att2DAMode::Temporal)
    }

    /// Length of the softmax axis for an input of shape `(rows, cols)`.
    pub fn axis_len(self, rows: usize, cols: usize) -> usize {
        if self.transposed() {
            rows
        } else {
            cols
        }
    }
}

impl fmt::Display for Att2DAMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Att2DAMode::Input => "input",
            Att2DAMode::Codeword => "codeword",
            Att2DAMode::Temporal => "temporal",
        })
    }
}

impl FromStr for Att2DAMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "input" => Ok(Att2DAMode::Input),
            "codeword" => Ok(Att2DAMode::Codeword),
            "temporal" => Ok(Att2DAMode::Temporal),
            other => Err(Error::InvalidArgument(format!("unknown 2DA mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Att2DAParams {
    pub w: Matrix,
    /// `α = sigmoid(alpha_raw)`.
    pub alpha_raw: f64,
    pub mode: Att2DAMode,
}

impl Att2DAParams {
    pub fn new(w: Matrix, alpha_raw: f64, mode: Att2DAMode) -> Result<Self> {
        if w.rows() != w.cols() || w.rows() == 0 {
            return Err(Error::InvalidArgument(format!(
                "2DA weight must be square and non-empty, got {:?}",
                w.shape()
            )));
        }
        let mut p = Att2DAParams { w, alpha_raw, mode };
        p.enforce_diagonal();
        Ok(p)
    }

    /// Off-diagonal entries from `U(±1/√size)`, `α = 0.5`.
    pub fn init(size: usize, mode: Att2DAMode, rng: &mut impl Rng) -> Result<Self> {
        let bound = 1.0 / (size as f64).sqrt();
        Att2DAParams::new(rng::uniform_matrix(rng, size, size, bound), 0.0, mode)
    }

    pub fn size(&self) -> usize {
        self.w.rows()
    }

    pub fn alpha(&self) -> f64 {
        sigmoid(self.alpha_raw)
    }

    /// Sets `α` directly; `0` and `1` are reached exactly.
    pub fn set_alpha(&mut self, alpha: f64) {
        self.alpha_raw = logit(alpha);
    }

    /// Rewrites the frozen diagonal to `1/size`.
    pub fn enforce_diagonal(&mut self) {
        let d = 1.0 / self.size() as f64;
        self.w.set_diagonal(d);
    }

    fn effective_w(&self) -> Matrix {
        let mut w = self.w.clone();
        w.set_diagonal(1.0 / self.size() as f64);
        w
    }
}

#[derive(Debug, Clone)]
pub struct Att2DAForward {
    pub output: Matrix,
    /// Attention matrix in the oriented frame (rows of `P`).
    pub attention: Matrix,
    oriented: Matrix,
    effective_w: Matrix,
}

#[derive(Debug, Clone)]
pub struct Att2DAGrads {
    pub phi: Matrix,
    /// Zero on the diagonal.
    pub w: Matrix,
    pub alpha_raw: f64,
}

pub fn att_2da(phi: &Matrix, p: &Att2DAParams) -> Result<Matrix> {
    Ok(att_2da_forward(phi, p)?.output)
}

pub fn att_2da_forward(phi: &Matrix, p: &Att2DAParams) -> Result<Att2DAForward> {
    let oriented = if p.mode.transposed() {
        phi.transpose()
    } else {
        phi.clone()
    };
    if oriented.cols() != p.size() {
        return Err(Error::shape("att_2da", phi.shape(), p.w.shape()));
    }
    let effective_w = p.effective_w();
    let attention = oriented.matmul(&effective_w)?.softmax_rows();
    let alpha = p.alpha();
    let mixed = oriented.zip_with(&attention, "att_2da", |x, a| {
        alpha * (x * a) + (1.0 - alpha) * x
    })?;
    let output = if p.mode.transposed() {
        mixed.transpose()
    } else {
        mixed
    };
    Ok(Att2DAForward {
        output,
        attention,
        oriented,
        effective_w,
    })
}

pub fn att_2da_backward(
    p: &Att2DAParams,
    fwd: &Att2DAForward,
    upstream: &Matrix,
) -> Result<Att2DAGrads> {
    if upstream.shape() != fwd.output.shape() {
        return Err(Error::shape("att_2da_backward", fwd.output.shape(), upstream.shape()));
    }
    let g = if p.mode.transposed() {
        upstream.transpose()
    } else {
        upstream.clone()
    };
    let alpha = p.alpha();
    let (x, a) = (&fwd.oriented, &fwd.attention);

    let mut g_alpha = 0.0;
    for ((gv, xv), av) in g.data().iter().zip(x.data()).zip(a.data()) {
        g_alpha += gv * (xv * av - xv);
    }
    let mut g_x = g.zip_with(a, "att_2da_backward", |gv, av| alpha * gv * av + (1.0 - alpha) * gv)?;
    let g_a = g.zip_with(x, "att_2da_backward", |gv, xv| alpha * gv * xv)?;
    let g_z = softmax_rows_vjp(a, &g_a)?;
    g_x.add_assign(&g_z.matmul_t(&fwd.effective_w)?);
    let mut g_w = x.t_matmul(&g_z)?;
    g_w.set_diagonal(0.0);

    Ok(Att2DAGrads {
        phi: if p.mode.transposed() { g_x.transpose() } else { g_x },
        w: g_w,
        alpha_raw: g_alpha * alpha * (1.0 - alpha),
    })
}

/// [`att_2da`] as a [`DiffOp`] over `[phi, w, alpha_raw (1×1)]`.
#[derive(Debug, Clone, Copy)]
pub struct Att2DAOp {
    pub mode: Att2DAMode,
}

impl Att2DAOp {
    fn params(&self, inputs: &[Matrix]) -> Result<Att2DAParams> {
        expect_arity("att_2da", inputs, 3)?;
        Att2DAParams::new(inputs[1].clone(), inputs[2].get(0, 0), self.mode)
    }
}

impl DiffOp for Att2DAOp {
    fn name(&self) -> &str {
        "att_2da"
    }

    fn forward(&self, inputs: &[Matrix]) -> Result<Matrix> {
        att_2da(&inputs[0], &self.params(inputs)?)
    }

    fn vjp(&self, inputs: &[Matrix], _output: &Matrix, upstream: &Matrix) -> Result<Vec<Matrix>> {
        let p = self.params(inputs)?;
        let fwd = att_2da_forward(&inputs[0], &p)?;
        let g = att_2da_backward(&p, &fwd, upstream)?;
        Ok(vec![g.phi, g.w, Matrix::scalar(g.alpha_raw)])
    }
}
