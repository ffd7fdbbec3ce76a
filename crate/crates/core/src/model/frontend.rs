//! Learnable temporal-convolution frontend: same-length, zero-padded 1D
//! convolution over time followed by ReLU.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ops::expect_arity;
use crate::numerics::{DiffOp, Matrix};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalConv {
    /// `C × (D·width)`; entry `[c, f·width + t]` weights feature `f` at offset `t − width/2`.
    pub kernel: Matrix,
    /// `C × 1`.
    pub bias: Matrix,
    pub width: usize,
}

#[derive(Debug, Clone)]
pub struct ConvForward {
    pub output: Matrix,
    patches: Matrix,
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub x: Matrix,
    pub kernel: Matrix,
    pub bias: Matrix,
}

impl TemporalConv {
    pub fn new(kernel: Matrix, bias: Matrix, width: usize) -> Result<Self> {
        if width.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "convolution width must be odd, got {width}"
            )));
        }
        if !kernel.cols().is_multiple_of(width) || bias.shape() != (kernel.rows(), 1) {
            return Err(Error::shape("frontend_conv", kernel.shape(), bias.shape()));
        }
        Ok(TemporalConv {
            kernel,
            bias,
            width,
        })
    }

    pub fn init(input_dim: usize, channels: usize, width: usize, rng: &mut impl Rng) -> Result<Self> {
        let fan_in = input_dim * width;
        let kernel = rng::uniform_matrix(rng, channels, fan_in, 1.0 / (fan_in as f64).sqrt());
        TemporalConv::new(kernel, Matrix::zeros(channels, 1), width)
    }

    pub fn input_dim(&self) -> usize {
        self.kernel.cols() / self.width
    }

    pub fn channels(&self) -> usize {
        self.kernel.rows()
    }

    /// im2col: row `f·width + t`, column `n` holds `x[f, n + t − width/2]` (0 outside).
    fn patches(&self, x: &Matrix) -> Matrix {
        let half = (self.width / 2) as isize;
        let n = x.cols() as isize;
        Matrix::from_fn(x.rows() * self.width, x.cols(), |r, col| {
            let (f, t) = (r / self.width, (r % self.width) as isize);
            let src = col as isize + t - half;
            if (0..n).contains(&src) {
                x.get(f, src as usize)
            } else {
                0.0
            }
        })
    }

    pub fn forward(&self, x: &Matrix) -> Result<ConvForward> {
        if x.rows() != self.input_dim() {
            return Err(Error::shape("frontend_conv", x.shape(), self.kernel.shape()));
        }
        let patches = self.patches(x);
        let mut output = self.kernel.matmul(&patches)?;
        for c in 0..output.rows() {
            let b = self.bias.get(c, 0);
            for v in output.row_mut(c) {
                *v = (*v + b).max(0.0);
            }
        }
        Ok(ConvForward { output, patches })
    }

    pub fn backward(&self, x: &Matrix, fwd: &ConvForward, upstream: &Matrix) -> Result<ConvGrads> {
        // ReLU passes gradient where the output is positive.
        let g_pre = upstream.zip_with(&fwd.output, "frontend_conv_backward", |g, y| {
            if y > 0.0 {
                g
            } else {
                0.0
            }
        })?;
        let bias = Matrix::from_fn(g_pre.rows(), 1, |c, _| g_pre.row(c).iter().sum());
        let kernel = g_pre.matmul_t(&fwd.patches)?;
        let g_patches = self.kernel.t_matmul(&g_pre)?;
        let half = (self.width / 2) as isize;
        let n = x.cols() as isize;
        let mut gx = Matrix::zeros(x.rows(), x.cols());
        for r in 0..g_patches.rows() {
            let (f, t) = (r / self.width, (r % self.width) as isize);
            for col in 0..x.cols() {
                let src = col as isize + t - half;
                if (0..n).contains(&src) {
                    let s = src as usize;
                    gx.set(f, s, gx.get(f, s) + g_patches.get(r, col));
                }
            }
        }
        Ok(ConvGrads {
            x: gx,
            kernel,
            bias,
        })
    }
}

/// Applies the frontend once.
pub fn frontend_conv(x: &Matrix, conv: &TemporalConv) -> Result<Matrix> {
    Ok(conv.forward(x)?.output)
}

/// [`frontend_conv`] as a [`DiffOp`] over `[x, kernel, bias]`.
#[derive(Debug, Clone, Copy)]
pub struct FrontendConvOp {
    pub width: usize,
}

impl DiffOp for FrontendConvOp {
    fn name(&self) -> &str {
        "frontend_conv"
    }

    fn forward(&self, inputs: &[Matrix]) -> Result<Matrix> {
        expect_arity(self.name(), inputs, 3)?;
        let conv = TemporalConv::new(inputs[1].clone(), inputs[2].clone(), self.width)?;
        frontend_conv(&inputs[0], &conv)
    }

    fn vjp(&self, inputs: &[Matrix], _output: &Matrix, upstream: &Matrix) -> Result<Vec<Matrix>> {
        let conv = TemporalConv::new(inputs[1].clone(), inputs[2].clone(), self.width)?;
        let fwd = conv.forward(&inputs[0])?;
        let g = conv.backward(&inputs[0], &fwd, upstream)?;
        Ok(vec![g.x, g.kernel, g.bias])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check_seeded;

    fn loop_oracle(x: &Matrix, conv: &TemporalConv) -> Matrix {
        let half = conv.width as isize / 2;
        Matrix::from_fn(conv.channels(), x.cols(), |c, n| {
            let mut acc = conv.bias.get(c, 0);
            for f in 0..x.rows() {
                for t in 0..conv.width {
                    let src = n as isize + t as isize - half;
                    if src >= 0 && (src as usize) < x.cols() {
                        acc += conv.kernel.get(c, f * conv.width + t) * x.get(f, src as usize);
                    }
                }
            }
            acc.max(0.0)
        })
    }

    #[test]
    fn identity_kernel_passes_non_negative_input() {
        let width = 3;
        let kernel = Matrix::from_fn(2, 2 * width, |c, j| if j == c * width + 1 { 1.0 } else { 0.0 });
        let conv = TemporalConv::new(kernel, Matrix::zeros(2, 1), width).unwrap();
        let x = rng::uniform_matrix(&mut rng::seeded(1), 2, 7, 1.0).map(f64::abs);
        assert_eq!(frontend_conv(&x, &conv).unwrap(), x);
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let conv = TemporalConv::init(3, 4, 5, &mut rng::seeded(2)).unwrap();
        assert_eq!(frontend_conv(&Matrix::zeros(3, 9), &conv).unwrap(), Matrix::zeros(4, 9));
    }

    #[test]
    fn even_width_is_rejected() {
        assert!(TemporalConv::new(Matrix::zeros(2, 4), Matrix::zeros(2, 1), 2).is_err());
    }

    #[test]
    fn matches_loop_oracle() {
        for seed in 0..5 {
            let mut r = rng::seeded(seed);
            let mut conv = TemporalConv::init(3, 4, 5, &mut r).unwrap();
            conv.bias = rng::uniform_matrix(&mut r, 4, 1, 0.5);
            let x = rng::uniform_matrix(&mut r, 3, 9, 2.0);
            let diff = frontend_conv(&x, &conv).unwrap().max_abs_diff(&loop_oracle(&x, &conv));
            assert!(diff <= 1e-12, "{diff}");
        }
    }

    #[test]
    fn gradients_check_out() {
        for trial in 0..10 {
            let mut r = rng::seeded(50 + trial);
            let x = rng::uniform_matrix(&mut r, 3, 6, 2.0);
            let kernel = rng::uniform_matrix(&mut r, 4, 9, 1.0);
            let bias = rng::uniform_matrix(&mut r, 4, 1, 0.5);
            let rep = grad_check_seeded(&FrontendConvOp { width: 3 }, &[x, kernel, bias], 1e-5, trial).unwrap();
            assert!(rep.passed(1e-4), "trial {trial}: {rep:?}");
        }
    }
}
