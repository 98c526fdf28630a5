use rand::Rng;

use super::{BranchNet, ModelConfig, NetworkError};
use crate::tensor::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};

/// Affine coupling over two token branches `[P, d]`:
///
/// `y1 = x1 + Φ(x2)`, `y2 = x2 ⊙ exp(s(y1)) + Υ(y1)` with
/// `s(·) = α·tanh(Ψ(·)/α)`.
#[derive(Debug, Clone)]
pub struct CouplingSubmodule {
    pub phi: BranchNet,
    pub psi: BranchNet,
    pub upsilon: BranchNet,
    /// Learned positional table `[P, d]`, shared by the three nets.
    pub pos: Option<ParamId>,
    pub clamp_alpha: f64,
}

fn finite<T: Scalar>(g: &Graph<T>, v: Var, what: &str) -> Result<(), NetworkError> {
    if g.value(v).all_finite() {
        Ok(())
    } else {
        Err(NetworkError::NonFinite(what.to_string()))
    }
}

impl CouplingSubmodule {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, name: &str, d: usize, cfg: &ModelConfig, rng: &mut R) -> Self {
        let pos = cfg.pos_embed.then(|| {
            let p = cfg.pos_grid.0 * cfg.pos_grid.1;
            let data = (0..p * d).map(|_| T::cast_from(rng.gen_range(-0.02..0.02))).collect();
            store.add(format!("{name}.pos"), Tensor::new(&[p, d], data).expect("shape"))
        });
        Self {
            phi: BranchNet::new(store, &format!("{name}.phi"), d, cfg, rng),
            psi: BranchNet::new(store, &format!("{name}.psi"), d, cfg, rng),
            upsilon: BranchNet::new(store, &format!("{name}.upsilon"), d, cfg, rng),
            pos,
            clamp_alpha: cfg.clamp_alpha,
        }
    }

    fn pos_var<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Option<Var>, NetworkError> {
        let Some(id) = self.pos else { return Ok(None) };
        let table = store.get(id).value.shape().to_vec();
        if table != g.shape(x) {
            return Err(NetworkError::ShapeMismatch(format!(
                "positional table {table:?} does not match tokens {:?}",
                g.shape(x)
            )));
        }
        Ok(Some(g.param(store, id)))
    }

    /// The clamped log-scale `s(y1)`.
    pub fn log_scale<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, y1: Var) -> Result<Var, NetworkError> {
        let pos = self.pos_var(g, store, y1)?;
        let raw = self.psi.forward(g, store, y1, pos)?;
        let t = g.scale(raw, 1.0 / self.clamp_alpha)?;
        let t = g.tanh(t)?;
        Ok(g.scale(t, self.clamp_alpha)?)
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x1: Var,
        x2: Var,
    ) -> Result<(Var, Var), NetworkError> {
        if g.shape(x1) != g.shape(x2) {
            return Err(NetworkError::ShapeMismatch(format!("branches {:?} vs {:?}", g.shape(x1), g.shape(x2))));
        }
        let pos = self.pos_var(g, store, x2)?;
        let phi = self.phi.forward(g, store, x2, pos)?;
        let y1 = g.add(x1, phi)?;
        let s = self.log_scale(g, store, y1)?;
        let e = g.exp(s)?;
        let m = g.mul(x2, e)?;
        let ups = self.upsilon.forward(g, store, y1, pos)?;
        let y2 = g.add(m, ups)?;
        finite(g, y1, "coupling forward")?;
        finite(g, y2, "coupling forward")?;
        Ok((y1, y2))
    }

    pub fn inverse<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        y1: Var,
        y2: Var,
    ) -> Result<(Var, Var), NetworkError> {
        if g.shape(y1) != g.shape(y2) {
            return Err(NetworkError::ShapeMismatch(format!("branches {:?} vs {:?}", g.shape(y1), g.shape(y2))));
        }
        let pos = self.pos_var(g, store, y1)?;
        let s = self.log_scale(g, store, y1)?;
        let neg = g.scale(s, -1.0)?;
        let e = g.exp(neg)?;
        let ups = self.upsilon.forward(g, store, y1, pos)?;
        let d = g.sub(y2, ups)?;
        let x2 = g.mul(d, e)?;
        let phi = self.phi.forward(g, store, x2, pos)?;
        let x1 = g.sub(y1, phi)?;
        finite(g, x1, "coupling inverse")?;
        finite(g, x2, "coupling inverse")?;
        Ok((x1, x2))
    }
}
