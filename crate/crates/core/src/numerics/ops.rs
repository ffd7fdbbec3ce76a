//! Differentiable primitives: forward value plus vector-Jacobian product.
//!
//! Every layer in the crate composes these by hand; the [`DiffOp`] trait is
//! the common surface used by the gradient checker.

use crate::error::{Error, Result};

use super::Matrix;

/// A differentiable operation over a fixed list of matrix inputs.
pub trait DiffOp {
    fn name(&self) -> &str;

    fn forward(&self, inputs: &[Matrix]) -> Result<Matrix>;

    /// Cotangent of every input given the cotangent of the output.
    fn vjp(&self, inputs: &[Matrix], output: &Matrix, upstream: &Matrix) -> Result<Vec<Matrix>>;
}

pub(crate) fn expect_arity(name: &str, inputs: &[Matrix], n: usize) -> Result<()> {
    if inputs.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{name} expects {n} inputs, got {}",
            inputs.len()
        )));
    }
    Ok(())
}

/// `(upstream · bᵀ, aᵀ · upstream)`.
pub fn matmul_vjp(a: &Matrix, b: &Matrix, upstream: &Matrix) -> Result<(Matrix, Matrix)> {
    Ok((upstream.matmul_t(b)?, a.t_matmul(upstream)?))
}

/// Row-wise softmax VJP written in terms of the forward output `s`:
/// `g_in = s ⊙ (g − rowsum(g ⊙ s))`.
pub fn softmax_rows_vjp(s: &Matrix, upstream: &Matrix) -> Result<Matrix> {
    if s.shape() != upstream.shape() {
        return Err(Error::shape("softmax_rows_vjp", s.shape(), upstream.shape()));
    }
    let mut out = Matrix::zeros(s.rows(), s.cols());
    for i in 0..s.rows() {
        let (sr, gr) = (s.row(i), upstream.row(i));
        let inner: f64 = sr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((o, a), b) in out.row_mut(i).iter_mut().zip(sr).zip(gr) {
            *o = a * (b - inner);
        }
    }
    Ok(out)
}

/// Sigmoid VJP in terms of the forward output `s`.
pub fn sigmoid_vjp(s: &Matrix, upstream: &Matrix) -> Result<Matrix> {
    s.zip_with(upstream, "sigmoid_vjp", |s, g| g * s * (1.0 - s))
}

pub fn hadamard_vjp(a: &Matrix, b: &Matrix, upstream: &Matrix) -> Result<(Matrix, Matrix)> {
    Ok((upstream.hadamard(b)?, upstream.hadamard(a)?))
}

/// VJP of `mean_cols` for an input with `cols` columns.
pub fn mean_cols_vjp(cols: usize, upstream: &Matrix) -> Matrix {
    let inv = 1.0 / cols as f64;
    Matrix::from_fn(upstream.rows(), cols, |i, _| upstream.get(i, 0) * inv)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MatMul;

impl DiffOp for MatMul {
    fn name(&self) -> &str {
        "matmul"
    }

    fn forward(&self, inputs: &[Matrix]) -> Result<Matrix> {
        expect_arity(self.name(), inputs, 2)?;
        inputs[0].matmul(&inputs[1])
    }

    fn vjp(&self, inputs: &[Matrix], _output: &Matrix, upstream: &Matrix) -> Result<Vec<Matrix>> {
        let (ga, gb) = matmul_vjp(&inputs[0], &inputs[1], upstream)?;
        Ok(vec![ga, gb])
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SoftmaxRows;

impl DiffOp for SoftmaxRows {
    fn name(&self) -> &str {
        "softmax_rows"
    }

    fn forward(&self, inputs: &[Matrix]) -> Result<Matrix> {
        expect_arity(self.name(), inputs, 1)?;
        Ok(inputs[0].softmax_rows())
    }

    fn vjp(&self, _inputs: &[Matrix], output: &Matrix, upstream: &Matrix) -> Result<Vec<Matrix>> {
        Ok(vec![softmax_rows_vjp(output, upstream)?])
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Sigmoid;

impl DiffOp for Sigmoid {
    fn name(&self) -> &str {
        "sigmoid"
    }

    fn forward(&self, inputs: &[Matrix]) -> Result<Matrix> {
        expect_arity(self.name(), inputs, 1)?;
        Ok(inputs[0].sigmoid())
    }

    fn vjp(&self, _inputs: &[Matrix], output: &Matrix, upstream: &Matrix) -> Result<Vec<Matrix>> {
        Ok(vec![sigmoid_vjp(output, upstream)?])
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Transpose;

impl DiffOp for Transpose {
    fn name(&self) -> &str {
        "transpose"
    }

    fn forward(&self, inputs: &[Matrix]) -> Result<Matrix> {
        expect_arity(self.name(), inputs, 1)?;
        Ok(inputs[0].transpose())
    }

    fn vjp(&self, _inputs: &[Matrix], _output: &Matrix, upstream: &Matrix) -> Result<Vec<Matrix>> {
        Ok(vec![upstream.transpose()])
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Hadamard;

impl DiffOp for Hadamard {
    fn name(&self) -> &str {
        "hadamard"
    }

    fn forward(&self, inputs: &[Matrix]) -> Result<Matrix> {
        expect_arity(self.name(), inputs, 2)?;
        inputs[0].hadamard(&inputs[1])
    }

    fn vjp(&self, inputs: &[Matrix], _output: &Matrix, upstream: &Matrix) -> Result<Vec<Matrix>> {
        let (ga, gb) = hadamard_vjp(&inputs[0], &inputs[1], upstream)?;
        Ok(vec![ga, gb])
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MeanCols;

impl DiffOp for MeanCols {
    fn name(&self) -> &str {
        "mean_cols"
    }

    fn forward(&self, inputs: &[Matrix]) -> Result<Matrix> {
        expect_arity(self.name(), inputs, 1)?;
        inputs[0].mean_cols()
    }

    fn vjp(&self, inputs: &[Matrix], _output: &Matrix, upstream: &Matrix) -> Result<Vec<Matrix>> {
        Ok(vec![mean_cols_vjp(inputs[0].cols(), upstream)])
    }
}
