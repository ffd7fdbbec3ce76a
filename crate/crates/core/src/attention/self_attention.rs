//! Self-attention over the quantized representation `Φ ∈ R^{K×N}`.
//!
//! Each head projects `Φ` into a `d`-dimensional latent space and scores
//! pairs with a scaled dot product `q kᵀ / √d`:
//!
//! | variant | queries | keys | attention | mixing |
//! |---|---|---|---|---|
//! | codeword-temporal | `Φ Wqᵀ` (K×d) | `Φᵀ Wkᵀ` (N×d) | sigmoid, K×N | `αΦ + (1−α) A ⊙ Φ` |
//! | codeword | `Φ Wqᵀ` (K×d) | `Φ Wkᵀ` (K×d) | row softmax, K×K | `αΦ + (1−α) A Φ` |
//! | temporal | `Φᵀ Wqᵀ` (N×d) | `Φᵀ Wkᵀ` (N×d) | row softmax, N×N | `(αΦᵀ + (1−α) A Φᵀ)ᵀ` |
//!
//! Head outputs are stacked along the codeword axis, giving `(h·K)×N`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ops::softmax_rows_vjp;
use crate::numerics::{logit, sigmoid, DiffOp, Matrix};
use crate::rng;

use super::dropout::dropout_mask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelfAttVariant {
    CodewordTemporal,
    Codeword,
    Temporal,
}

impl SelfAttVariant {
    /// `(Wq shape, Wk shape)` for a `K×N` input and latent size `d`.
    pub fn projection_shapes(
        self,
        codewords: usize,
        seq_len: usize,
        d: usize,
    ) -> ((usize, usize), (usize, usize)) {
        match self {
            SelfAttVariant::CodewordTemporal => ((d, seq_len), (d, codewords)),
            SelfAttVariant::Codeword => ((d, seq_len), (d, seq_len)),
            SelfAttVariant::Temporal => ((d, codewords), (d, codewords)),
        }
    }

    /// Shape of each head's attention matrix.
    pub fn attention_shape(self, codewords: usize, seq_len: usize) -> (usize, usize) {
        match self {
            SelfAttVariant::CodewordTemporal => (codewords, seq_len),
            SelfAttVariant::Codeword => (codewords, codewords),
            SelfAttVariant::Temporal => (seq_len, seq_len),
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            SelfAttVariant::CodewordTemporal => "ctsa",
            SelfAttVariant::Codeword => "csa",
            SelfAttVariant::Temporal => "tsa",
        }
    }
}

impl fmt::Display for SelfAttVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for SelfAttVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ctsa" => Ok(SelfAttVariant::CodewordTemporal),
            "csa" => Ok(SelfAttVariant::Codeword),
            "tsa" => Ok(SelfAttVariant::Temporal),
            other => Err(Error::InvalidArgument(format!(
                "unknown self-attention variant `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionHead {
    pub wq: Matrix,
    pub wk: Matrix,
    /// `α = sigmoid(alpha_raw)`.
    pub alpha_raw: f64,
}

impl AttentionHead {
    pub fn alpha(&self) -> f64 {
        sigmoid(self.alpha_raw)
    }

    /// Sets `α` directly; `0` and `1` are reached exactly.
    pub fn set_alpha(&mut self, alpha: f64) {
        self.alpha_raw = logit(alpha);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfAttParams {
    pub variant: SelfAttVariant,
    pub heads: Vec<AttentionHead>,
    pub dropout_rate: f64,
}

impl SelfAttParams {
    pub fn new(variant: SelfAttVariant, heads: Vec<AttentionHead>, dropout_rate: f64) -> Result<Self> {
        let Some(first) = heads.first() else {
            return Err(Error::InvalidArgument("self-attention needs at least one head".into()));
        };
        let d = first.wq.rows();
        if d == 0 {
            return Err(Error::InvalidArgument("latent dimension d must be >= 1".into()));
        }
        for h in &heads {
            if h.wq.rows() != d || h.wk.rows() != d {
                return Err(Error::shape("self_attention heads", first.wq.shape(), h.wq.shape()));
            }
            if h.wq.shape() != first.wq.shape() || h.wk.shape() != first.wk.shape() {
                return Err(Error::shape("self_attention heads", first.wk.shape(), h.wk.shape()));
            }
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate must lie in [0, 1), got {dropout_rate}"
            )));
        }
        Ok(SelfAttParams {
            variant,
            heads,
            dropout_rate,
        })
    }

    /// Projections drawn from `U(±1/√fan_in)`, every `α = 0.5`.
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        variant: SelfAttVariant,
        codewords: usize,
        seq_len: usize,
        d: usize,
        heads: usize,
        dropout_rate: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let (q_shape, k_shape) = variant.projection_shapes(codewords, seq_len, d);
        let heads = (0..heads)
            .map(|_| AttentionHead {
                wq: rng::uniform_matrix(rng, q_shape.0, q_shape.1, 1.0 / (q_shape.1 as f64).sqrt()),
                wk: rng::uniform_matrix(rng, k_shape.0, k_shape.1, 1.0 / (k_shape.1 as f64).sqrt()),
                alpha_raw: 0.0,
            })
            .collect();
        SelfAttParams::new(variant, heads, dropout_rate)
    }

    pub fn latent_dim(&self) -> usize {
        self.heads[0].wq.rows()
    }

    fn check_input(&self, phi: &Matrix) -> Result<()> {
        let (k, n) = phi.shape();
        let (q_shape, k_shape) = self.variant.projection_shapes(k, n, self.latent_dim());
        let head = &self.heads[0];
        if head.wq.shape() != q_shape {
            return Err(Error::shape(self.op_name(), phi.shape(), head.wq.shape()));
        }
        if head.wk.shape() != k_shape {
            return Err(Error::shape(self.op_name(), phi.shape(), head.wk.shape()));
        }
        Ok(())
    }

    fn op_name(&self) -> &'static str {
        match self.variant {
            SelfAttVariant::CodewordTemporal => "att_ctsa",
            SelfAttVariant::Codeword => "att_csa",
            SelfAttVariant::Temporal => "att_tsa",
        }
    }
}

/// Whether dropout is active, and the seed feeding it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pass {
    Eval,
    Train { seed: u64 },
}

#[derive(Debug, Clone)]
pub struct HeadForward {
    /// Attention matrix before dropout.
    pub attention: Matrix,
    /// Attention matrix after dropout (same as `attention` in eval).
    pub applied: Matrix,
    mask: Option<Matrix>,
    q: Matrix,
    k: Matrix,
}

#[derive(Debug, Clone)]
pub struct SelfAttForward {
    pub output: Matrix,
    pub heads: Vec<HeadForward>,
}

#[derive(Debug, Clone)]
pub struct HeadGrads {
    pub wq: Matrix,
    pub wk: Matrix,
    pub alpha_raw: f64,
}

#[derive(Debug, Clone)]
pub struct SelfAttGrads {
    pub phi: Matrix,
    pub heads: Vec<HeadGrads>,
}

fn expect_variant(p: &SelfAttParams, want: SelfAttVariant) -> Result<()> {
    if p.variant != want {
        return Err(Error::InvalidArgument(format!(
            "parameters are for {}, called as {}",
            p.variant, want
        )));
    }
    Ok(())
}

/// Codeword-temporal self-attention (eval mode).
pub fn att_ctsa(phi: &Matrix, p: &SelfAttParams) -> Result<Matrix> {
    expect_variant(p, SelfAttVariant::CodewordTemporal)?;
    Ok(self_attention_forward(phi, p, Pass::Eval)?.output)
}

/// Codeword self-attention (eval mode).
pub fn att_csa(phi: &Matrix, p: &SelfAttParams) -> Result<Matrix> {
    expect_variant(p, SelfAttVariant::Codeword)?;
    Ok(self_attention_forward(phi, p, Pass::Eval)?.output)
}

/// Temporal self-attention (eval mode).
pub fn att_tsa(phi: &Matrix, p: &SelfAttParams) -> Result<Matrix> {
    expect_variant(p, SelfAttVariant::Temporal)?;
    Ok(self_attention_forward(phi, p, Pass::Eval)?.output)
}

pub fn self_attention_forward(phi: &Matrix, p: &SelfAttParams, pass: Pass) -> Result<SelfAttForward> {
    p.check_input(phi)?;
    let scale = 1.0 / (p.latent_dim() as f64).sqrt();
    let phi_t = phi.transpose();
    let mut outputs = Vec::with_capacity(p.heads.len());
    let mut heads = Vec::with_capacity(p.heads.len());
    for (idx, head) in p.heads.iter().enumerate() {
        let alpha = head.alpha();
        let (q, k) = match p.variant {
            SelfAttVariant::CodewordTemporal => (phi.matmul_t(&head.wq)?, phi_t.matmul_t(&head.wk)?),
            SelfAttVariant::Codeword => (phi.matmul_t(&head.wq)?, phi.matmul_t(&head.wk)?),
            SelfAttVariant::Temporal => (phi_t.matmul_t(&head.wq)?, phi_t.matmul_t(&head.wk)?),
        };
        let scores = q.matmul_t(&k)?.scale(scale);
        let attention = match p.variant {
            SelfAttVariant::CodewordTemporal => scores.sigmoid(),
            _ => scores.softmax_rows(),
        };
        let mask = match pass {
            Pass::Train { seed } if p.dropout_rate > 0.0 => Some(dropout_mask(
                attention.rows(),
                attention.cols(),
                p.dropout_rate,
                rng::derive(seed, idx as u64),
            )?),
            _ => None,
        };
        let applied = match &mask {
            Some(m) => attention.hadamard(m)?,
            None => attention.clone(),
        };
        let out = match p.variant {
            SelfAttVariant::CodewordTemporal => {
                phi.zip_with(&applied, "att_ctsa", |x, a| alpha * x + (1.0 - alpha) * (a * x))?
            }
            SelfAttVariant::Codeword => mix(phi, &applied.matmul(phi)?, alpha)?,
            SelfAttVariant::Temporal => mix(&phi_t, &applied.matmul(&phi_t)?, alpha)?.transpose(),
        };
        outputs.push(out);
        heads.push(HeadForward {
            attention,
            applied,
            mask,
            q,
            k,
        });
    }
    Ok(SelfAttForward {
        output: Matrix::vstack(&outputs)?,
        heads,
    })
}

fn mix(identity: &Matrix, attended: &Matrix, alpha: f64) -> Result<Matrix> {
    identity.zip_with(attended, "self_attention", |x, y| alpha * x + (1.0 - alpha) * y)
}

pub fn self_attention_backward(
    phi: &Matrix,
    p: &SelfAttParams,
    fwd: &SelfAttForward,
    upstream: &Matrix,
) -> Result<SelfAttGrads> {
    if upstream.shape() != fwd.output.shape() {
        return Err(Error::shape("self_attention_backward", fwd.output.shape(), upstream.shape()));
    }
    let k_rows = phi.rows();
    let scale = 1.0 / (p.latent_dim() as f64).sqrt();
    let phi_t = phi.transpose();
    let mut g_phi = Matrix::zeros(phi.rows(), phi.cols());
    let mut heads = Vec::with_capacity(p.heads.len());

    for (idx, (head, cache)) in p.heads.iter().zip(&fwd.heads).enumerate() {
        let alpha = head.alpha();
        let g = upstream.row_block(idx * k_rows, k_rows);
        let head_grads = match p.variant {
            SelfAttVariant::CodewordTemporal => {
                let ad = &cache.applied;
                let mut g_alpha = 0.0;
                for ((gv, xv), av) in g.data().iter().zip(phi.data()).zip(ad.data()) {
                    g_alpha += gv * (xv - av * xv);
                }
                g_phi.add_assign(&g.zip_with(ad, "att_ctsa", |gv, av| {
                    alpha * gv + (1.0 - alpha) * av * gv
                })?);
                let mut g_a = g.zip_with(phi, "att_ctsa", |gv, xv| (1.0 - alpha) * gv * xv)?;
                if let Some(m) = &cache.mask {
                    g_a = g_a.hadamard(m)?;
                }
                let g_s = g_a.zip_with(&cache.attention, "att_ctsa", |gv, a| gv * a * (1.0 - a) * scale)?;
                let g_q = g_s.matmul(&cache.k)?;
                let g_k = g_s.t_matmul(&cache.q)?;
                g_phi.add_assign(&g_q.matmul(&head.wq)?);
                g_phi.add_assign(&g_k.matmul(&head.wk)?.transpose());
                HeadGrads {
                    wq: g_q.t_matmul(phi)?,
                    wk: g_k.t_matmul(&phi_t)?,
                    alpha_raw: g_alpha * alpha * (1.0 - alpha),
                }
            }
            SelfAttVariant::Codeword => {
                let (g_x, hg) = softmax_head_backward(phi, head, cache, &g, scale)?;
                g_phi.add_assign(&g_x);
                hg
            }
            SelfAttVariant::Temporal => {
                let (g_x, hg) = softmax_head_backward(&phi_t, head, cache, &g.transpose(), scale)?;
                g_phi.add_assign(&g_x.transpose());
                hg
            }
        };
        heads.push(head_grads);
    }
    Ok(SelfAttGrads { phi: g_phi, heads })
}

/// Backward of `out = αX + (1−α) drop(softmax(s·(X Wqᵀ)(X Wkᵀ)ᵀ)) X`.
fn softmax_head_backward(
    x: &Matrix,
    head: &AttentionHead,
    cache: &HeadForward,
    g: &Matrix,
    scale: f64,
) -> Result<(Matrix, HeadGrads)> {
    let alpha = head.alpha();
    let ad = &cache.applied;
    let attended = ad.matmul(x)?;
    let mut g_alpha = 0.0;
    for ((gv, xv), yv) in g.data().iter().zip(x.data()).zip(attended.data()) {
        g_alpha += gv * (xv - yv);
    }
    let mut g_x = g.scale(alpha);
    g_x.axpy(1.0 - alpha, &ad.t_matmul(g)?);
    let mut g_a = g.matmul_t(x)?.scale(1.0 - alpha);
    if let Some(m) = &cache.mask {
        g_a = g_a.hadamard(m)?;
    }
    let g_s = softmax_rows_vjp(&cache.attention, &g_a)?.scale(scale);
    let g_q = g_s.matmul(&cache.k)?;
    let g_k = g_s.t_matmul(&cache.q)?;
    g_x.add_assign(&g_q.matmul(&head.wq)?);
    g_x.add_assign(&g_k.matmul(&head.wk)?);
    Ok((
        g_x,
        HeadGrads {
            wq: g_q.t_matmul(x)?,
            wk: g_k.t_matmul(x)?,
            alpha_raw: g_alpha * alpha * (1.0 - alpha),
        },
    ))
}

/// Self-attention as a [`DiffOp`] over `[phi, (wq, wk, alpha_raw)…]` in eval mode.
#[derive(Debug, Clone, Copy)]
pub struct SelfAttOp {
    pub variant: SelfAttVariant,
}

impl SelfAttOp {
    fn params(&self, inputs: &[Matrix]) -> Result<SelfAttParams> {
        if inputs.len() < 4 || !(inputs.len() - 1).is_multiple_of(3) {
            return Err(Error::InvalidArgument(format!(
                "{} expects phi plus 3 inputs per head, got {} inputs",
                self.variant,
                inputs.len()
            )));
        }
        let heads = inputs[1..]
            .chunks(3)
            .map(|c| AttentionHead {
                wq: c[0].clone(),
                wk: c[1].clone(),
                alpha_raw: c[2].get(0, 0),
            })
            .collect();
        SelfAttParams::new(self.variant, heads, 0.0)
    }

    /// Flattens parameters into the op's input order.
    pub fn inputs(phi: &Matrix, p: &SelfAttParams) -> Vec<Matrix> {
        let mut v = vec![phi.clone()];
        for h in &p.heads {
            v.extend([h.wq.clone(), h.wk.clone(), Matrix::scalar(h.alpha_raw)]);
        }
        v
    }
}

impl DiffOp for SelfAttOp {
    fn name(&self) -> &str {
        self.variant.short_name()
    }

    fn forward(&self, inputs: &[Matrix]) -> Result<Matrix> {
        let p = self.params(inputs)?;
        Ok(self_attention_forward(&inputs[0], &p, Pass::Eval)?.output)
    }

    fn vjp(&self, inputs: &[Matrix], _output: &Matrix, upstream: &Matrix) -> Result<Vec<Matrix>> {
        let p = self.params(inputs)?;
        let fwd = self_attention_forward(&inputs[0], &p, Pass::Eval)?;
        let g = self_attention_backward(&inputs[0], &p, &fwd, upstream)?;
        let mut out = vec![g.phi];
        for h in g.heads {
            out.extend([h.wq, h.wk, Matrix::scalar(h.alpha_raw)]);
        }
        Ok(out)
    }
}
