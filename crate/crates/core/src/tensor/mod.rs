//! A small reverse-mode autodiff engine over dense row-major tensors.
//!
//! Values are recorded on a [`Graph`] tape; [`Graph::backward`] walks the
//! tape once in reverse. Parameters live outside the graph in a
//! [`ParamStore`] and are bound per step.

mod gradcheck;
mod graph;
mod optim;
mod scalar;

use std::sync::Arc;

use thiserror::Error;

pub use gradcheck::{gradcheck, GradCheckReport};
pub use graph::{Graph, Var};
pub use optim::{Adam, AdamConfig, Param, ParamId, ParamStore};
pub use scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("{0}: expected a scalar")]
    NotScalar(&'static str),
    #[error("backward already ran on this graph")]
    BackwardTwice,
    #[error("matrix is singular (|det| = {0:e})")]
    Singular(f64),
    #[error("{0}: non-finite value")]
    NonFinite(&'static str),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// Dense row-major tensor with copy-on-write storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(TensorError::ShapeMismatch { op: "tensor", lhs: shape.to_vec(), rhs: vec![data.len()] });
        }
        Ok(Self { shape: shape.to_vec(), data: Arc::new(data) })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: &[usize], v: T) -> Self {
        Self { shape: shape.to_vec(), data: Arc::new(vec![v; shape.iter().product()]) }
    }

    pub fn scalar(v: T) -> Self {
        Self { shape: vec![], data: Arc::new(vec![v]) }
    }

    pub fn eye(n: usize) -> Self {
        let mut d = vec![T::zero(); n * n];
        for i in 0..n {
            d[i * n + i] = T::one();
        }
        Self { shape: vec![n, n], data: Arc::new(d) }
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::cast_from(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_vec(self) -> Vec<T> {
        Arc::try_unwrap(self.data).unwrap_or_else(|a| (*a).clone())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading dimension; 1 for scalars.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Product of all trailing dimensions.
    pub fn cols(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.len() {
            return Err(TensorError::ShapeMismatch { op: "reshape", lhs: self.shape.clone(), rhs: shape.to_vec() });
        }
        Ok(Self { shape: shape.to_vec(), data: self.data.clone() })
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: Arc::new(self.data.iter().map(|v| U::cast_from(v.as_f64())).collect()) }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        self.data.iter().zip(other.data.iter()).map(|(a, b)| (a.as_f64() - b.as_f64()).abs()).fold(0.0, f64::max)
    }

    /// Row-major transpose of a 2-D tensor.
    pub fn transposed(&self) -> Tensor<T> {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor { shape: vec![c, r], data: Arc::new(out) }
    }
}

/// Matrix inverse and determinant via LU with partial pivoting, computed in
/// double precision.
pub fn invert_matrix<T: Scalar>(m: &Tensor<T>) -> Result<(Tensor<T>, f64)> {
    let n = m.rows();
    if m.shape().len() != 2 || m.cols() != n {
        return Err(TensorError::ShapeMismatch { op: "inverse", lhs: m.shape().to_vec(), rhs: vec![n, n] });
    }
    let mat = nalgebra::DMatrix::from_row_iterator(n, n, m.data().iter().map(|v| v.as_f64()));
    let lu = mat.lu();
    let det = lu.determinant();
    let inv = lu.try_inverse().ok_or(TensorError::Singular(det))?;
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            out.push(T::cast_from(inv[(i, j)]));
        }
    }
    Ok((Tensor::new(&[n, n], out)?, det))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn copy_on_write() {
        let a = Tensor::<f64>::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut b = a.clone();
        b.data_mut()[0] = 9.0;
        assert_eq!(a.data()[0], 1.0);
        assert_eq!(b.data()[0], 9.0);
    }

    #[test]
    fn inverse_of_known_matrix() {
        let a = Tensor::<f64>::new(&[2, 2], vec![4.0, 7.0, 2.0, 6.0]).unwrap();
        let (inv, det) = invert_matrix(&a).unwrap();
        assert!((det - 10.0).abs() < 1e-12);
        let want = [0.6, -0.7, -0.2, 0.4];
        for (x, w) in inv.data().iter().zip(want) {
            assert!((x - w).abs() < 1e-12);
        }
        let s = Tensor::<f64>::new(&[2, 2], vec![1.0, 2.0, 2.0, 4.0]).unwrap();
        assert!(matches!(invert_matrix(&s), Err(TensorError::Singular(_))));
    }
}
