//! Naive loop implementations used as independent references, plus random
//! instance builders. Nothing here calls the matrix kernels under test.

#![allow(dead_code)]

use nbof_core::attention::{Att2DAMode, AttentionHead, SelfAttParams, SelfAttVariant};
use nbof_core::Matrix;
use rand::Rng;

pub type Grid = Vec<Vec<f64>>;

pub fn grid(m: &Matrix) -> Grid {
    (0..m.rows()).map(|i| (0..m.cols()).map(|j| m.get(i, j)).collect()).collect()
}

pub fn transpose(a: &Grid) -> Grid {
    if a.is_empty() {
        return vec![];
    }
    (0..a[0].len()).map(|j| a.iter().map(|row| row[j]).collect()).collect()
}

pub fn matmul(a: &Grid, b: &Grid) -> Grid {
    let (n, inner, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..inner {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

fn softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn max_abs_diff(a: &Grid, b: &Matrix) -> f64 {
    assert_eq!((a.len(), a.first().map_or(0, |r| r.len())), b.shape(), "oracle shape");
    let mut worst: f64 = 0.0;
    for (i, row) in a.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            worst = worst.max((v - b.get(i, j)).abs());
        }
    }
    worst
}

/// `phi[k][n] = exp(-‖(x_n − v_k) ⊙ w_k‖) / Σ_m exp(-‖(x_n − v_m) ⊙ w_m‖)`.
pub fn quantize(x: &Grid, v: &Grid, w: &Grid) -> Grid {
    let (d, n, k) = (x.len(), x[0].len(), v.len());
    let mut phi = vec![vec![0.0; n]; k];
    for t in 0..n {
        let mut dist = vec![0.0; k];
        for c in 0..k {
            let mut s = 0.0;
            for f in 0..d {
                let e = (x[f][t] - v[c][f]) * w[c][f];
                s += e * e;
            }
            dist[c] = s.sqrt();
        }
        let probs = softmax_row(&dist.iter().map(|v| -v).collect::<Vec<_>>());
        for c in 0..k {
            phi[c][t] = probs[c];
        }
    }
    phi
}

pub fn mean_columns(phi: &Grid) -> Vec<f64> {
    phi.iter().map(|row| row.iter().sum::<f64>() / row.len() as f64).collect()
}

/// 2D-attention with the diagonal of `w` replaced by `1/size`.
pub fn two_d(phi: &Grid, w: &Grid, alpha: f64, mode: Att2DAMode) -> Grid {
    let p = match mode {
        Att2DAMode::Temporal => phi.clone(),
        _ => transpose(phi),
    };
    let size = w.len();
    let mut weff = w.clone();
    for (i, row) in weff.iter_mut().enumerate() {
        row[i] = 1.0 / size as f64;
    }
    let scores = matmul(&p, &weff);
    let mut out = p.clone();
    for (i, row) in scores.iter().enumerate() {
        let a = softmax_row(row);
        for j in 0..row.len() {
            out[i][j] = alpha * p[i][j] * a[j] + (1.0 - alpha) * p[i][j];
        }
    }
    match mode {
        Att2DAMode::Temporal => out,
        _ => transpose(&out),
    }
}

/// Per-head attention matrices followed by the row-stacked output.
pub fn self_attention(phi: &Grid, variant: SelfAttVariant, heads: &[(Grid, Grid, f64)]) -> (Vec<Grid>, Grid) {
    let phi_t = transpose(phi);
    let mut stacked = Vec::new();
    let mut attentions = Vec::new();
    for (wq, wk, alpha) in heads {
        let d = wq.len() as f64;
        let (q_src, k_src) = match variant {
            SelfAttVariant::CodewordTemporal => (phi, &phi_t),
            SelfAttVariant::Codeword => (phi, phi),
            SelfAttVariant::Temporal => (&phi_t, &phi_t),
        };
        let q = matmul(q_src, &transpose(wq));
        let k = matmul(k_src, &transpose(wk));
        let mut a = vec![vec![0.0; k.len()]; q.len()];
        for i in 0..q.len() {
            for j in 0..k.len() {
                let dot: f64 = q[i].iter().zip(&k[j]).map(|(x, y)| x * y).sum();
                a[i][j] = dot / d.sqrt();
            }
        }
        match variant {
            SelfAttVariant::CodewordTemporal => {
                for row in &mut a {
                    for v in row.iter_mut() {
                        *v = sigmoid(*v);
                    }
                }
            }
            _ => {
                for row in &mut a {
                    *row = softmax_row(row);
                }
            }
        }
        let out = match variant {
            SelfAttVariant::CodewordTemporal => {
                let mut o = phi.clone();
                for i in 0..o.len() {
                    for j in 0..o[0].len() {
                        o[i][j] = alpha * phi[i][j] + (1.0 - alpha) * a[i][j] * phi[i][j];
                    }
                }
                o
            }
            SelfAttVariant::Codeword => {
                let ap = matmul(&a, phi);
                let mut o = phi.clone();
                for i in 0..o.len() {
                    for j in 0..o[0].len() {
                        o[i][j] = alpha * phi[i][j] + (1.0 - alpha) * ap[i][j];
                    }
                }
                o
            }
            SelfAttVariant::Temporal => {
                let ap = matmul(&a, &phi_t);
                let mut o = phi_t.clone();
                for i in 0..o.len() {
                    for j in 0..o[0].len() {
                        o[i][j] = alpha * phi_t[i][j] + (1.0 - alpha) * ap[i][j];
                    }
                }
                transpose(&o)
            }
        };
        stacked.extend(out);
        attentions.push(a);
    }
    (attentions, stacked)
}

pub fn random_matrix(r: &mut impl Rng, rows: usize, cols: usize, half_width: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| r.random_range(-half_width..=half_width))
}

/// Random column-stochastic `K×N` matrix.
pub fn random_phi(r: &mut impl Rng, k: usize, n: usize) -> Matrix {
    let mut m = Matrix::from_fn(k, n, |_, _| r.random_range(0.01..1.0));
    for j in 0..n {
        let s: f64 = (0..k).map(|i| m.get(i, j)).sum();
        for i in 0..k {
            m.set(i, j, m.get(i, j) / s);
        }
    }
    m
}

pub fn random_self_attention(
    r: &mut impl Rng,
    variant: SelfAttVariant,
    k: usize,
    n: usize,
    d: usize,
    heads: usize,
) -> SelfAttParams {
    let (qs, ks) = variant.projection_shapes(k, n, d);
    let heads = (0..heads)
        .map(|_| AttentionHead {
            wq: random_matrix(r, qs.0, qs.1, 2.0),
            wk: random_matrix(r, ks.0, ks.1, 2.0),
            alpha_raw: r.random_range(-2.0..2.0),
        })
        .collect();
    SelfAttParams::new(variant, heads, 0.0).unwrap()
}

pub fn head_grids(p: &SelfAttParams) -> Vec<(Grid, Grid, f64)> {
    p.heads.iter().map(|h| (grid(&h.wq), grid(&h.wk), h.alpha())).collect()
}

/// Columns (or rows) reordered so that new position `i` holds old `perm[i]`.
pub fn permute_cols(m: &Matrix, perm: &[usize]) -> Matrix {
    Matrix::from_fn(m.rows(), m.cols(), |i, j| m.get(i, perm[j]))
}

pub fn permute_rows(m: &Matrix, perm: &[usize]) -> Matrix {
    Matrix::from_fn(m.rows(), m.cols(), |i, j| m.get(perm[i], j))
}
