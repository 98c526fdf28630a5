use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::NetworkError;
use crate::tensor::{invert_matrix, Graph, ParamId, ParamStore, Scalar, Tensor, Var};

/// Smallest accepted `|det(W)|`.
pub const MIN_ABS_DET: f64 = 1e-8;
/// `|det(W)|` that [`EnhanceLayer::refresh_with_floor`] restores during
/// training.
pub const DET_FLOOR: f64 = 1e-6;

/// Invertible 1x1 convolution over all concatenated sub-band channels.
#[derive(Debug, Clone)]
pub struct EnhanceLayer<T> {
    pub weight: ParamId,
    inverse: Tensor<T>,
    det: f64,
}

/// Haar-distributed random orthogonal matrix (QR of a Gaussian matrix with
/// the signs of `R`'s diagonal folded into `Q`).
pub fn random_rotation<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let a = DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    let qr = a.qr();
    let (q, r) = (qr.q(), qr.r());
    let mut out = vec![0.0; n * n];
    for j in 0..n {
        let s = if r[(j, j)] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            out[i * n + j] = q[(i, j)] * s;
        }
    }
    out
}

impl<T: Scalar> EnhanceLayer<T> {
    /// Layer bound to an existing weight; call [`Self::refresh`] before use.
    pub(crate) fn placeholder(weight: ParamId) -> Self {
        Self { weight, inverse: Tensor::zeros(&[0]), det: 0.0 }
    }

    pub fn new(store: &mut ParamStore<T>, weight: Tensor<T>) -> Result<Self, NetworkError> {
        let id = store.add("enhance.weight", weight);
        let mut layer = Self { weight: id, inverse: Tensor::zeros(&[0]), det: 0.0 };
        layer.refresh(store)?;
        Ok(layer)
    }

    /// Recomputes the cached inverse; call after every weight change.
    pub fn refresh(&mut self, store: &ParamStore<T>) -> Result<(), NetworkError> {
        let w = &store.get(self.weight).value;
        let (inv, det) = invert_matrix(w).map_err(|_| NetworkError::SingularWeight(0.0))?;
        if !det.is_finite() || det.abs() < MIN_ABS_DET {
            return Err(NetworkError::SingularWeight(det));
        }
        self.inverse = inv;
        self.det = det;
        Ok(())
    }

    /// Like [`Self::refresh`], but first rescales the weight uniformly so
    /// that `|det(W)| >= floor`. Returns whether a rescale happened.
    pub fn refresh_with_floor(&mut self, store: &mut ParamStore<T>, floor: f64) -> Result<bool, NetworkError> {
        let w = &store.get(self.weight).value;
        let n = w.rows();
        let (inv, det) = invert_matrix(w).map_err(|_| NetworkError::SingularWeight(0.0))?;
        if !det.is_finite() || det == 0.0 {
            return Err(NetworkError::SingularWeight(det));
        }
        if det.abs() >= floor {
            self.inverse = inv;
            self.det = det;
            return Ok(false);
        }
        let s = (floor / det.abs()).powf(1.0 / n as f64);
        for v in store.get_mut(self.weight).value.data_mut() {
            *v = T::cast_from(v.as_f64() * s);
        }
        self.refresh(store)?;
        Ok(true)
    }

    pub fn det(&self) -> f64 {
        self.det
    }

    pub fn cached_inverse(&self) -> &Tensor<T> {
        &self.inverse
    }

    /// `max |W W^-1 - I|` for the cached inverse.
    pub fn inverse_error(&self, store: &ParamStore<T>) -> f64 {
        let w = store.get(self.weight).value.to_f64_vec();
        let inv = self.inverse.to_f64_vec();
        let n = self.inverse.rows();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let v: f64 = (0..n).map(|k| w[i * n + k] * inv[k * n + j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((v - want).abs());
            }
        }
        worst
    }

    /// `x: [C, P] -> W x`.
    pub fn forward(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var, NetworkError> {
        let w = g.param(store, self.weight);
        Ok(g.conv1x1(x, w)?)
    }

    /// `y: [C, P] -> W^-1 y`. Differentiates through the inverse when the
    /// graph tracks gradients, otherwise uses the cached matrix.
    pub fn inverse(&self, g: &mut Graph<T>, store: &ParamStore<T>, y: Var) -> Result<Var, NetworkError> {
        let inv = if g.grad_enabled() {
            let w = g.param(store, self.weight);
            g.inverse(w)?
        } else {
            g.constant(self.inverse.clone())
        };
        Ok(g.conv1x1(y, inv)?)
    }
}
