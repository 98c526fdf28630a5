use rand::Rng;

use super::ModelConfig;
use crate::tensor::{Graph, ParamId, ParamStore, Result, Scalar, Tensor, Var};

fn xavier<T: Scalar, R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor<T> {
    let lim = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| T::cast_from(rng.gen_range(-lim..lim))).collect();
    Tensor::new(&[fan_in, fan_out], data).expect("shape")
}

/// `y = x W + b` with `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        zero: bool,
        rng: &mut R,
    ) -> Self {
        let w = if zero { Tensor::zeros(&[fan_in, fan_out]) } else { xavier(rng, fan_in, fan_out) };
        Self {
            w: store.add(format!("{name}.w"), w),
            b: store.add(format!("{name}.b"), Tensor::zeros(&[fan_out])),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let (w, b) = (g.param(store, self.w), g.param(store, self.b));
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, d: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Tensor::filled(&[d], T::one())),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[d])),
        }
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, eps: f64) -> Result<Var> {
        let (gain, bias) = (g.param(store, self.gain), g.param(store, self.bias));
        g.layer_norm(x, gain, bias, eps)
    }
}

/// Pre-LN block over tokens `[P, d]`: `x += MHSA(LN(x)); x += MLP(LN(x))`.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub ln1: LayerNormParams,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ln2: LayerNormParams,
    pub fc1: Linear,
    pub fc2: Linear,
    heads: usize,
    eps: f64,
}

impl TransformerBlock {
    /// With `zero_out` the attention and MLP output projections start at
    /// zero, making the block an exact identity.
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        d: usize,
        cfg: &ModelConfig,
        zero_out: bool,
        rng: &mut R,
    ) -> Self {
        let a = cfg.dim_attn;
        Self {
            ln1: LayerNormParams::new(store, &format!("{name}.ln1"), d),
            q: Linear::new(store, &format!("{name}.q"), d, a, false, rng),
            k: Linear::new(store, &format!("{name}.k"), d, a, false, rng),
            v: Linear::new(store, &format!("{name}.v"), d, a, false, rng),
            o: Linear::new(store, &format!("{name}.o"), a, d, zero_out, rng),
            ln2: LayerNormParams::new(store, &format!("{name}.ln2"), d),
            fc1: Linear::new(store, &format!("{name}.fc1"), d, cfg.dim_mlp, false, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), cfg.dim_mlp, d, zero_out, rng),
            heads: cfg.heads,
            eps: cfg.ln_eps,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.ln1.forward(g, store, x, self.eps)?;
        let q = self.q.forward(g, store, h)?;
        let k = self.k.forward(g, store, h)?;
        let v = self.v.forward(g, store, h)?;
        let a = g.shape(q)[1];
        let dh = a / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for head in 0..self.heads {
            let qh = g.slice_cols(q, head * dh, dh)?;
            let kh = g.slice_cols(k, head * dh, dh)?;
            let vh = g.slice_cols(v, head * dh, dh)?;
            let s = g.matmul_nt(qh, kh)?;
            let s = g.scale(s, scale)?;
            let p = g.softmax(s, 1)?;
            outs.push(g.matmul(p, vh)?);
        }
        let cat = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs)? };
        let attn = self.o.forward(g, store, cat)?;
        let x = g.add(x, attn)?;
        let h = self.ln2.forward(g, store, x, self.eps)?;
        let m = self.fc1.forward(g, store, h)?;
        let m = g.gelu(m)?;
        let m = self.fc2.forward(g, store, m)?;
        g.add(x, m)
    }
}

/// One of Φ, Ψ, Υ: a stack of blocks followed by a zero-initialized
/// `d -> d` head, so the whole net outputs zeros at initialization.
#[derive(Debug, Clone)]
pub struct BranchNet {
    pub blocks: Vec<TransformerBlock>,
    pub head: Linear,
}

impl BranchNet {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, name: &str, d: usize, cfg: &ModelConfig, rng: &mut R) -> Self {
        let blocks =
            (0..cfg.blocks_per_branch).map(|i| TransformerBlock::new(store, &format!("{name}.block{i}"), d, cfg, false, rng)).collect();
        let head = Linear::new(store, &format!("{name}.head"), d, d, true, rng);
        Self { blocks, head }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, pos: Option<Var>) -> Result<Var> {
        let mut h = match pos {
            Some(p) => g.add(x, p)?,
            None => x,
        };
        for b in &self.blocks {
            h = b.forward(g, store, h)?;
        }
        self.head.forward(g, store, h)
    }
}
