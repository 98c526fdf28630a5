use super::{Result, Scalar, Tensor, TensorError};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Ordered, named collection of trainable tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.params.push(Param { name: name.into(), value });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    /// Total number of scalar entries.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore { params: self.params.iter().map(|p| Param { name: p.name.clone(), value: p.value.cast() }).collect() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 5e-4, beta1: 0.5, beta2: 0.999, eps: 1e-6, weight_decay: 5e-4 }
    }
}

/// Classic Adam: weight decay is added to the gradient before the moment
/// updates, and both moments are bias-corrected.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    pub fn new<T: Scalar>(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let zeros = || store.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect::<Vec<_>>();
        Self { config, m: zeros(), v: zeros(), step: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn second_moments(&self) -> impl Iterator<Item = &[f64]> {
        self.v.iter().map(|v| v.as_slice())
    }

    /// One update. `grads[i]` is the gradient of parameter `i`, or `None`
    /// when the parameter did not take part in the loss (treated as zero).
    pub fn step<T: Scalar>(&mut self, store: &mut ParamStore<T>, grads: &[Option<Vec<T>>]) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step",
                lhs: vec![store.len()],
                rhs: vec![grads.len(), self.m.len()],
            });
        }
        for (i, p) in store.iter_mut().enumerate() {
            let n = p.value.len();
            if let Some(g) = &grads[i] {
                if g.len() != n {
                    return Err(TensorError::ShapeMismatch { op: "adam_step", lhs: p.value.shape().to_vec(), rhs: vec![g.len()] });
                }
            }
            if self.m[i].len() != n {
                return Err(TensorError::ShapeMismatch { op: "adam_step", lhs: p.value.shape().to_vec(), rhs: vec![self.m[i].len()] });
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps, weight_decay } = self.config;
        let t = self.step as i32;
        let (bc1, bc2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
        for (i, p) in store.iter_mut().enumerate() {
            let g = grads[i].as_deref();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in p.value.data_mut().iter_mut().enumerate() {
                let wf = w.as_f64();
                let gj = g.map_or(0.0, |g| g[j].as_f64()) + weight_decay * wf;
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *w = T::cast_from(wf - lr * mhat / (vhat.sqrt() + eps));
            }
        }
        Ok(())
    }
}
