//! The invertible hiding network: sub-band normalization, an invertible
//! 1x1 "enhance" convolution over 384 channels, and N transformer-driven
//! affine coupling sub-modules.

mod container;
mod coupling;
mod enhance;
mod layers;

use std::path::Path;

use rand::Rng;
use thiserror::Error;

pub use container::{CheckpointError, TensorFile, FORMAT_VERSION, MAGIC};
pub use coupling::CouplingSubmodule;
pub use enhance::{random_rotation, EnhanceLayer, DET_FLOOR, MIN_ABS_DET};
pub use layers::{BranchNet, LayerNormParams, Linear, TransformerBlock};

use crate::tensor::{Graph, ParamStore, Scalar, Tensor, TensorError, Var};
use crate::transform::{SubbandMap, IMAGE_SUBBANDS};

/// Channels per branch (one image's sub-bands).
pub const BRANCH_CHANNELS: usize = IMAGE_SUBBANDS;
/// Channels entering the enhance layer.
pub const TOTAL_CHANNELS: usize = 2 * IMAGE_SUBBANDS;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("enhance weight is singular (|det| = {0:e})")]
    SingularWeight(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnhanceInit {
    /// Random orthogonal matrix.
    Rotation,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Number of coupling sub-modules (N).
    pub submodules: usize,
    pub heads: usize,
    /// Total attention width across all heads.
    pub dim_attn: usize,
    pub dim_mlp: usize,
    pub blocks_per_branch: usize,
    pub clamp_alpha: f64,
    pub pos_embed: bool,
    /// Token grid the positional tables are sized for.
    pub pos_grid: (usize, usize),
    pub ln_eps: f64,
    pub enhance_init: EnhanceInit,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            submodules: 12,
            heads: 8,
            dim_attn: 512,
            dim_mlp: 1024,
            blocks_per_branch: 1,
            clamp_alpha: 2.0,
            pos_embed: false,
            pos_grid: (16, 16),
            ln_eps: 1e-5,
            enhance_init: EnhanceInit::Rotation,
        }
    }
}

fn parse_field<V: std::str::FromStr>(key: &str, v: &str) -> Result<V, NetworkError> {
    v.parse().map_err(|_| NetworkError::Config(format!("{key}: cannot parse {v:?}")))
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), NetworkError> {
        let bad = |m: &str| Err(NetworkError::Config(m.to_string()));
        if self.submodules == 0 {
            return bad("submodules must be at least 1");
        }
        if self.heads == 0 || self.dim_attn == 0 || self.dim_attn % self.heads != 0 {
            return bad("dim_attn must be a positive multiple of heads");
        }
        if self.dim_mlp == 0 {
            return bad("dim_mlp must be positive");
        }
        if !(self.clamp_alpha > 0.0 && self.clamp_alpha.is_finite()) {
            return bad("clamp_alpha must be positive");
        }
        if !(self.ln_eps > 0.0) {
            return bad("ln_eps must be positive");
        }
        if self.pos_embed && self.pos_grid.0 * self.pos_grid.1 == 0 {
            return bad("pos_grid must be non-empty");
        }
        Ok(())
    }

    pub fn to_records(&self) -> Vec<(String, String)> {
        let init = match self.enhance_init {
            EnhanceInit::Rotation => "rotation",
            EnhanceInit::Identity => "identity",
        };
        [
            ("submodules", self.submodules.to_string()),
            ("heads", self.heads.to_string()),
            ("dim_attn", self.dim_attn.to_string()),
            ("dim_mlp", self.dim_mlp.to_string()),
            ("blocks_per_branch", self.blocks_per_branch.to_string()),
            ("clamp_alpha", format!("{:?}", self.clamp_alpha)),
            ("pos_embed", self.pos_embed.to_string()),
            ("pos_grid_h", self.pos_grid.0.to_string()),
            ("pos_grid_w", self.pos_grid.1.to_string()),
            ("ln_eps", format!("{:?}", self.ln_eps)),
            ("enhance_init", init.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Applies one `key=value` setting; unknown keys are an error.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), NetworkError> {
        match key {
            "submodules" => self.submodules = parse_field(key, v)?,
            "heads" => self.heads = parse_field(key, v)?,
            "dim_attn" => self.dim_attn = parse_field(key, v)?,
            "dim_mlp" => self.dim_mlp = parse_field(key, v)?,
            "blocks_per_branch" => self.blocks_per_branch = parse_field(key, v)?,
            "clamp_alpha" => self.clamp_alpha = parse_field(key, v)?,
            "pos_embed" => self.pos_embed = parse_field(key, v)?,
            "pos_grid_h" => self.pos_grid.0 = parse_field(key, v)?,
            "pos_grid_w" => self.pos_grid.1 = parse_field(key, v)?,
            "ln_eps" => self.ln_eps = parse_field(key, v)?,
            "enhance_init" => {
                self.enhance_init = match v {
                    "rotation" => EnhanceInit::Rotation,
                    "identity" => EnhanceInit::Identity,
                    _ => return Err(NetworkError::Config(format!("enhance_init: unknown value {v:?}"))),
                }
            }
            _ => return Err(NetworkError::Config(format!("unknown model key {key:?}"))),
        }
        Ok(())
    }

    pub fn is_key(key: &str) -> bool {
        Self::default().to_records().iter().any(|(k, _)| k == key)
    }

    pub fn from_records(records: &[(String, String)]) -> Result<Self, NetworkError> {
        let mut cfg = Self::default();
        for key in cfg.to_records().into_iter().map(|(k, _)| k) {
            let v = records
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| NetworkError::Config(format!("missing hyperparameter {key}")))?;
            cfg.set(&key, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Frozen per-channel affine normalization, `x' = (x - shift) * scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandNorm {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

impl Default for SubbandNorm {
    fn default() -> Self {
        Self::identity()
    }
}

impl SubbandNorm {
    pub fn identity() -> Self {
        Self { scale: vec![1.0; TOTAL_CHANNELS], shift: vec![0.0; TOTAL_CHANNELS] }
    }

    /// `scale ≈ 1 / max(1, std)` per channel, rounded to the nearest power of
    /// two so that scaling and unscaling are exact in any precision.
    pub fn from_std(std: &[f64]) -> Result<Self, NetworkError> {
        if std.len() != TOTAL_CHANNELS {
            return Err(NetworkError::ShapeMismatch(format!("expected {TOTAL_CHANNELS} deviations, got {}", std.len())));
        }
        if std.iter().any(|s| !s.is_finite()) {
            return Err(NetworkError::NonFinite("sub-band deviation".into()));
        }
        let scale = std.iter().map(|&s| 2f64.powi(-(s.max(1.0).log2().round() as i32))).collect();
        Ok(Self { scale, shift: vec![0.0; TOTAL_CHANNELS] })
    }

    /// Measures per-channel standard deviations over paired cover and secret
    /// sub-band maps.
    pub fn fit<'a>(pairs: impl IntoIterator<Item = (&'a SubbandMap, &'a SubbandMap)>) -> Result<Self, NetworkError> {
        let mut sum = vec![0.0; TOTAL_CHANNELS];
        let mut sq = vec![0.0; TOTAL_CHANNELS];
        let mut count = 0usize;
        for (c, s) in pairs {
            if c.channels != BRANCH_CHANNELS || s.channels != BRANCH_CHANNELS || c.positions() != s.positions() {
                return Err(NetworkError::ShapeMismatch("cover/secret sub-band maps differ".into()));
            }
            let p = c.positions();
            for (k, map) in [(0, c), (BRANCH_CHANNELS, s)] {
                for ch in 0..BRANCH_CHANNELS {
                    for &v in &map.data[ch * p..(ch + 1) * p] {
                        sum[k + ch] += v;
                        sq[k + ch] += v * v;
                    }
                }
            }
            count += p;
        }
        if count == 0 {
            return Ok(Self::identity());
        }
        let n = count as f64;
        let std: Vec<f64> = (0..TOTAL_CHANNELS).map(|k| (sq[k] / n - (sum[k] / n).powi(2)).max(0.0).sqrt()).collect();
        Self::from_std(&std)
    }

    fn normalize<T: Scalar>(&self, g: &mut Graph<T>, x: Var, offset: usize) -> Result<Var, NetworkError> {
        let rows = g.shape(x)[0];
        let x = self.add_shift(g, x, offset, -1.0)?;
        Ok(g.scale_rows(x, &self.scale[offset..offset + rows])?)
    }

    fn denormalize<T: Scalar>(&self, g: &mut Graph<T>, x: Var, offset: usize) -> Result<Var, NetworkError> {
        let rows = g.shape(x)[0];
        let inv: Vec<f64> = self.scale[offset..offset + rows].iter().map(|s| 1.0 / s).collect();
        let x = g.scale_rows(x, &inv)?;
        self.add_shift(g, x, offset, 1.0)
    }

    fn add_shift<T: Scalar>(&self, g: &mut Graph<T>, x: Var, offset: usize, sign: f64) -> Result<Var, NetworkError> {
        let (rows, cols) = (g.shape(x)[0], g.shape(x)[1]);
        let shift = &self.shift[offset..offset + rows];
        if shift.iter().all(|&s| s == 0.0) {
            return Ok(x);
        }
        let data: Vec<f64> = (0..rows * cols).map(|i| sign * shift[i / cols]).collect();
        let c = g.constant(Tensor::from_f64(&[rows, cols], &data)?);
        Ok(g.add(x, c)?)
    }
}

/// Sub-band map as a `[C, P]` tensor.
pub fn map_to_tensor<T: Scalar>(m: &SubbandMap) -> Tensor<T> {
    Tensor::from_f64(&[m.channels, m.positions()], &m.data).expect("consistent map")
}

pub fn tensor_to_map<T: Scalar>(t: &Tensor<T>, rows: usize, cols: usize) -> Result<SubbandMap, NetworkError> {
    SubbandMap::new(t.rows(), rows, cols, t.to_f64_vec()).map_err(|e| NetworkError::ShapeMismatch(e.to_string()))
}

/// The full invertible network.
#[derive(Debug, Clone)]
pub struct EfdrModel<T: Scalar> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub norm: SubbandNorm,
    pub enhance: EnhanceLayer<T>,
    pub submodules: Vec<CouplingSubmodule>,
}

impl<T: Scalar> EfdrModel<T> {
    pub fn new<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self, NetworkError> {
        config.validate()?;
        let mut params = ParamStore::new();
        let w = match config.enhance_init {
            EnhanceInit::Identity => Tensor::eye(TOTAL_CHANNELS),
            EnhanceInit::Rotation => Tensor::from_f64(&[TOTAL_CHANNELS, TOTAL_CHANNELS], &random_rotation(TOTAL_CHANNELS, rng))?,
        };
        let enhance = EnhanceLayer::new(&mut params, w)?;
        let submodules = (0..config.submodules)
            .map(|i| CouplingSubmodule::new(&mut params, &format!("sub{i:02}"), BRANCH_CHANNELS, &config, rng))
            .collect();
        Ok(Self { config, params, norm: SubbandNorm::identity(), enhance, submodules })
    }

    /// Recomputes cached state after parameters change.
    pub fn refresh(&mut self) -> Result<(), NetworkError> {
        self.enhance.refresh(&self.params)
    }

    /// Refresh after an optimizer step: the enhance weight is first rescaled
    /// back to `|det| >= DET_FLOOR` if the step pushed it below.
    pub fn refresh_after_step(&mut self) -> Result<bool, NetworkError> {
        self.enhance.refresh_with_floor(&mut self.params, DET_FLOOR)
    }

    /// Perturbs every parameter with uniform noise (a test hook for
    /// exercising non-identity parameterizations). Matrices get noise of
    /// half-width `amp / sqrt(fan_in)`, so `amp = 1` is comparable to a fresh
    /// initialization; the enhance weight gets a tenth of that.
    pub fn randomize<R: Rng>(&mut self, rng: &mut R, amp: f64) -> Result<(), NetworkError> {
        let enhance = self.enhance.weight;
        for (i, p) in self.params.iter_mut().enumerate() {
            let mut a = match p.value.shape() {
                [fan_in, _] => amp / (*fan_in as f64).sqrt(),
                _ => amp,
            };
            if i == enhance.0 {
                a *= 0.1;
            }
            for v in p.value.data_mut() {
                *v = *v + T::cast_from(rng.gen_range(-a..=a));
            }
        }
        self.refresh()
    }

    pub fn cast<U: Scalar>(&self) -> Result<EfdrModel<U>, NetworkError> {
        let params = self.params.cast::<U>();
        let mut enhance = EnhanceLayer::<U>::placeholder(self.enhance.weight);
        enhance.refresh(&params)?;
        Ok(EfdrModel {
            config: self.config.clone(),
            params,
            norm: self.norm.clone(),
            enhance,
            submodules: self.submodules.clone(),
        })
    }

    fn check_pair(&self, g: &Graph<T>, a: Var, b: Var) -> Result<(), NetworkError> {
        let (sa, sb) = (g.shape(a), g.shape(b));
        if sa.len() != 2 || sa[0] != BRANCH_CHANNELS || sa != sb {
            return Err(NetworkError::ShapeMismatch(format!("expected two [{BRANCH_CHANNELS}, P] inputs, got {sa:?} and {sb:?}")));
        }
        Ok(())
    }

    /// Records the hiding direction. Inputs are `[192, P]` sub-band tensors;
    /// returns `(stego, r_f)` of the same shape.
    pub fn forward_graph(&self, g: &mut Graph<T>, cover: Var, secret: Var) -> Result<(Var, Var), NetworkError> {
        self.check_pair(g, cover, secret)?;
        let x = g.concat_rows(&[cover, secret])?;
        let x = self.norm.normalize(g, x, 0)?;
        let x = self.enhance.forward(g, &self.params, x)?;
        let t = g.transpose(x)?;
        let mut a = g.slice_cols(t, 0, BRANCH_CHANNELS)?;
        let mut b = g.slice_cols(t, BRANCH_CHANNELS, BRANCH_CHANNELS)?;
        for sub in &self.submodules {
            (a, b) = sub.forward(g, &self.params, a, b)?;
        }
        let st = g.transpose(a)?;
        let stego = self.norm.denormalize(g, st, 0)?;
        let rf = g.transpose(b)?;
        Ok((stego, rf))
    }

    /// Records the revealing direction; `aux` stands in for `r_f`.
    pub fn inverse_graph(&self, g: &mut Graph<T>, stego: Var, aux: Var) -> Result<(Var, Var), NetworkError> {
        self.check_pair(g, stego, aux)?;
        let s = self.norm.normalize(g, stego, 0)?;
        let mut a = g.transpose(s)?;
        let mut b = g.transpose(aux)?;
        for sub in self.submodules.iter().rev() {
            (a, b) = sub.inverse(g, &self.params, a, b)?;
        }
        let t = g.concat_cols(&[a, b])?;
        let x = g.transpose(t)?;
        let x = self.enhance.inverse(g, &self.params, x)?;
        let x = self.norm.denormalize(g, x, 0)?;
        let cover = g.slice_rows(x, 0, BRANCH_CHANNELS)?;
        let secret = g.slice_rows(x, BRANCH_CHANNELS, BRANCH_CHANNELS)?;
        Ok((cover, secret))
    }

    fn check_maps(a: &SubbandMap, b: &SubbandMap) -> Result<(), NetworkError> {
        if a.channels != BRANCH_CHANNELS || b.channels != BRANCH_CHANNELS || a.rows != b.rows || a.cols != b.cols {
            return Err(NetworkError::ShapeMismatch(format!(
                "expected two {BRANCH_CHANNELS}-channel maps of one size, got {}x{}x{} and {}x{}x{}",
                a.channels, a.rows, a.cols, b.channels, b.rows, b.cols
            )));
        }
        Ok(())
    }

    /// `(stego, r_f)` for a cover/secret pair.
    pub fn forward(&self, cover: &SubbandMap, secret: &SubbandMap) -> Result<(SubbandMap, SubbandMap), NetworkError> {
        Self::check_maps(cover, secret)?;
        let mut g = Graph::inference();
        let c = g.constant(map_to_tensor(cover));
        let s = g.constant(map_to_tensor(secret));
        let (st, rf) = self.forward_graph(&mut g, c, s)?;
        Ok((tensor_to_map(g.value(st), cover.rows, cover.cols)?, tensor_to_map(g.value(rf), cover.rows, cover.cols)?))
    }

    /// `(cover, secret)` recovered from a stego map and auxiliary input.
    pub fn inverse(&self, stego: &SubbandMap, aux: &SubbandMap) -> Result<(SubbandMap, SubbandMap), NetworkError> {
        Self::check_maps(stego, aux)?;
        let mut g = Graph::inference();
        let st = g.constant(map_to_tensor(stego));
        let ax = g.constant(map_to_tensor(aux));
        let (c, s) = self.inverse_graph(&mut g, st, ax)?;
        Ok((tensor_to_map(g.value(c), stego.rows, stego.cols)?, tensor_to_map(g.value(s), stego.rows, stego.cols)?))
    }

    pub fn to_container(&self, extra: &[(String, String)]) -> TensorFile {
        let mut meta = vec![("kind".to_string(), "checkpoint".to_string())];
        meta.extend(self.config.to_records());
        meta.extend(extra.iter().cloned());
        let mut tensors: Vec<(String, Tensor<f32>)> =
            self.params.iter().map(|(_, p)| (p.name.clone(), p.value.cast::<f32>())).collect();
        let norm = |v: &[f64]| Tensor::<f32>::from_f64(&[TOTAL_CHANNELS], v).expect("shape");
        tensors.push(("norm.scale".into(), norm(&self.norm.scale)));
        tensors.push(("norm.shift".into(), norm(&self.norm.shift)));
        TensorFile { meta, tensors }
    }

    /// Rebuilds a model from a container; hyperparameters come from the file.
    pub fn from_container(file: &TensorFile) -> Result<Self, NetworkError> {
        if file.meta("kind") != Some("checkpoint") {
            return Err(CheckpointError::Format("container is not a model checkpoint".into()).into());
        }
        let mut config = ModelConfig::from_records(&file.meta)?;
        // The skeleton is overwritten below; identity init avoids a QR.
        config.enhance_init = EnhanceInit::Identity;
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut model = Self::new(config, &mut rng)?;
        model.config = ModelConfig::from_records(&file.meta)?;
        let names: Vec<String> = model.params.iter().map(|(_, p)| p.name.clone()).collect();
        for (i, name) in names.iter().enumerate() {
            let t = file.tensor(name).ok_or_else(|| CheckpointError::Format(format!("missing tensor {name}")))?;
            let p = model.params.get_mut(crate::tensor::ParamId(i));
            if t.shape() != p.value.shape() {
                return Err(CheckpointError::Format(format!("tensor {name}: shape {:?}, expected {:?}", t.shape(), p.value.shape())).into());
            }
            p.value = t.cast();
        }
        let expected = names.len() + 2;
        if file.tensors.len() != expected {
            return Err(CheckpointError::Format(format!("{} tensors, expected {expected}", file.tensors.len())).into());
        }
        let vec_of = |n: &str| -> Result<Vec<f64>, NetworkError> {
            let t = file.tensor(n).ok_or_else(|| CheckpointError::Format(format!("missing tensor {n}")))?;
            if t.len() != TOTAL_CHANNELS {
                return Err(CheckpointError::Format(format!("{n}: wrong length")).into());
            }
            Ok(t.to_f64_vec())
        };
        model.norm = SubbandNorm { scale: vec_of("norm.scale")?, shift: vec_of("norm.shift")? };
        if model.norm.scale.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(CheckpointError::Format("normalization scales must be positive".into()).into());
        }
        model.refresh()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path, extra: &[(String, String)]) -> Result<(), NetworkError> {
        Ok(self.to_container(extra).write(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, NetworkError> {
        Self::from_container(&TensorFile::read(path)?)
    }
}
