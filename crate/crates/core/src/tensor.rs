//! Dense row-major tensors in the working scalar type.

use crate::error::{Error, Result};
use crate::rng::{normal, Rng};
use crate::scalar::Real;

/// Dense tensor. `data.len()` always equals the product of `shape`
/// (the empty shape denotes a scalar).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<R: Real> {
    shape: Vec<usize>,
    data: Vec<R>,
}

impl<R: Real> Tensor<R> {
    pub fn new(shape: Vec<usize>, data: Vec<R>) -> Self {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "tensor data length must match shape product"
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![R::zero(); n],
        }
    }

    pub fn full(shape: Vec<usize>, value: R) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: R) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    /// Normal(0, sigma) entries, deterministic given the rng state.
    pub fn randn(shape: Vec<usize>, sigma: R, rng: &mut Rng) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| normal::<R>(rng) * sigma).collect();
        Tensor { shape, data }
    }

    pub fn from_rows(rows: &[Vec<R>]) -> Self {
        let b = rows.len();
        let m = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(b * m);
        for r in rows {
            assert_eq!(r.len(), m, "ragged rows");
            data.extend_from_slice(r);
        }
        Tensor {
            shape: vec![b, m],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[R] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [R] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.is_empty()
    }

    /// Value of a scalar tensor.
    pub fn item(&self) -> R {
        assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::shape(op, "rank-2 tensor", format!("{other:?}"))),
        }
    }

    pub fn row(&self, i: usize) -> &[R] {
        let (_, c) = (self.shape[0], self.shape[1]);
        &self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute elementwise difference; panics on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor<R>) -> R {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (*a - *b).abs())
            .fold(R::zero(), R::max)
    }
}

/// y = x W + b for x: BxN, w: NxM, b: M.
pub fn matmul_bias<R: Real>(x: &Tensor<R>, w: &Tensor<R>, b: &Tensor<R>) -> Tensor<R> {
    let (rows, inner) = (x.shape()[0], x.shape()[1]);
    let (win, wout) = (w.shape()[0], w.shape()[1]);
    assert_eq!(inner, win, "matmul inner dims");
    assert_eq!(b.numel(), wout, "bias width");
    let mut out = vec![R::zero(); rows * wout];
    for i in 0..rows {
        let orow = &mut out[i * wout..(i + 1) * wout];
        orow.copy_from_slice(b.data());
        let xrow = &x.data()[i * inner..(i + 1) * inner];
        for (k, &xv) in xrow.iter().enumerate() {
            let wrow = &w.data()[k * wout..(k + 1) * wout];
            for (o, &wv) in orow.iter_mut().zip(wrow.iter()) {
                *o = *o + xv * wv;
            }
        }
    }
    Tensor::new(vec![rows, wout], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_product_invariant() {
        let t = Tensor::<f64>::zeros(vec![3, 4]);
        assert_eq!(t.numel(), 12);
        let s = Tensor::<f64>::scalar(5.0);
        assert_eq!(s.numel(), 1);
        assert!(s.is_scalar());
    }

    #[test]
    fn matmul_bias_hand_example() {
        // x=[[1,0]], W=[[2,0],[0,3]], b=[1,1] -> [[3,1]]
        let x = Tensor::new(vec![1, 2], vec![1.0, 0.0]);
        let w = Tensor::new(vec![2, 2], vec![2.0, 0.0, 0.0, 3.0]);
        let b = Tensor::new(vec![2], vec![1.0, 1.0]);
        let y = matmul_bias(&x, &w, &b);
        assert_eq!(y.data(), &[3.0, 1.0]);
    }
}
