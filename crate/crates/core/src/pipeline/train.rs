//! Training loop: Adam on the summed hiding and revealing losses, with a
//! plateau schedule driven by a held-out split.

use super::loss::{decode_matrix, hiding_loss_graph, matrix_tensor, revealing_loss_graph, secret_matrix};
use super::{coefficients_to_subbands, Dataset, PipelineError};
use crate::jpeg::QuantTable;
use crate::network::{map_to_tensor, EfdrModel, ModelConfig, SubbandNorm};
use crate::tensor::{Adam, AdamConfig, Graph, Tensor, Var};
use crate::transform::{secret_to_subbands, SubbandMap};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

/// Final model file written into the output directory.
pub const CHECKPOINT_NAME: &str = "model.efdr";
/// One JSON record per epoch.
pub const LOG_NAME: &str = "metrics.jsonl";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    /// Images per batch; each pair contributes a cover and a secret.
    pub batch_size: usize,
    pub epochs: usize,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub qf: u32,
    pub crop: usize,
    pub model: ModelConfig,
    pub seed: u64,
    /// Fraction of manifest pairs held out for the plateau schedule.
    pub val_fraction: f64,
    /// Write an intermediate checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    /// Record elapsed time in the log; off makes logs byte-reproducible.
    pub log_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 4,
            epochs: 200,
            plateau_factor: 0.5,
            plateau_patience: 10,
            qf: 75,
            crop: 128,
            model: ModelConfig::default(),
            seed: 0,
            val_fraction: 0.1,
            checkpoint_every: 0,
            log_wall_time: true,
        }
    }
}

fn parse_field<V: std::str::FromStr>(key: &str, v: &str) -> Result<V, PipelineError> {
    v.parse().map_err(|_| PipelineError::Config(format!("{key}: cannot parse {v:?}")))
}

impl TrainConfig {
    pub const KEYS: [&'static str; 15] = [
        "lr",
        "beta1",
        "beta2",
        "eps",
        "weight_decay",
        "batch_size",
        "epochs",
        "plateau_factor",
        "plateau_patience",
        "qf",
        "crop",
        "seed",
        "val_fraction",
        "checkpoint_every",
        "log_wall_time",
    ];

    pub fn is_key(key: &str) -> bool {
        Self::KEYS.contains(&key) || ModelConfig::is_key(key)
    }

    /// Applies one `key=value` setting; model hyperparameters are accepted
    /// too. Unknown keys are an error.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), PipelineError> {
        match key {
            "lr" => self.adam.lr = parse_field(key, v)?,
            "beta1" => self.adam.beta1 = parse_field(key, v)?,
            "beta2" => self.adam.beta2 = parse_field(key, v)?,
            "eps" => self.adam.eps = parse_field(key, v)?,
            "weight_decay" => self.adam.weight_decay = parse_field(key, v)?,
            "batch_size" => self.batch_size = parse_field(key, v)?,
            "epochs" => self.epochs = parse_field(key, v)?,
            "plateau_factor" => self.plateau_factor = parse_field(key, v)?,
            "plateau_patience" => self.plateau_patience = parse_field(key, v)?,
            "qf" => self.qf = parse_field(key, v)?,
            "crop" => self.crop = parse_field(key, v)?,
            "seed" => self.seed = parse_field(key, v)?,
            "val_fraction" => self.val_fraction = parse_field(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse_field(key, v)?,
            "log_wall_time" => self.log_wall_time = parse_field(key, v)?,
            _ if ModelConfig::is_key(key) => self.model.set(key, v).map_err(|e| PipelineError::Config(e.to_string()))?,
            _ => return Err(PipelineError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Training settings (without model hyperparameters) as records.
    pub fn to_records(&self) -> Vec<(String, String)> {
        let a = &self.adam;
        [
            ("lr", format!("{:?}", a.lr)),
            ("beta1", format!("{:?}", a.beta1)),
            ("beta2", format!("{:?}", a.beta2)),
            ("eps", format!("{:?}", a.eps)),
            ("weight_decay", format!("{:?}", a.weight_decay)),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("plateau_factor", format!("{:?}", self.plateau_factor)),
            ("plateau_patience", self.plateau_patience.to_string()),
            ("qf", self.qf.to_string()),
            ("crop", self.crop.to_string()),
            ("seed", self.seed.to_string()),
            ("val_fraction", format!("{:?}", self.val_fraction)),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("log_wall_time", self.log_wall_time.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        let a = &self.adam;
        if !(a.lr >= 0.0 && a.lr.is_finite()) {
            return bad("lr must be finite and non-negative");
        }
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
            return bad("betas must lie in [0, 1)");
        }
        if !(a.eps > 0.0) || !(a.weight_decay >= 0.0) {
            return bad("eps must be positive and weight_decay non-negative");
        }
        if self.batch_size < 2 || self.batch_size % 2 != 0 {
            return bad("batch_size must be a positive even number");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad("plateau_factor must lie in (0, 1)");
        }
        if !(1..=100).contains(&self.qf) {
            return bad("qf must lie in 1..=100");
        }
        if self.crop == 0 || self.crop % 8 != 0 {
            return bad("crop must be a positive multiple of 8");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction must lie in [0, 1)");
        }
        self.model.validate().map_err(|e| PipelineError::Config(e.to_string()))
    }
}

/// Reduce-on-plateau: after more than `patience` epochs without a relative
/// improvement of `threshold`, the rate is multiplied by `factor`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    pub threshold: f64,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize) -> Self {
        Self { factor, patience, threshold: 1e-4, best: f64::INFINITY, bad_epochs: 0 }
    }

    /// Feeds one epoch's metric; returns the learning rate for the next one.
    pub fn step(&mut self, metric: f64, lr: f64) -> f64 {
        if metric < self.best * (1.0 - self.threshold) {
            self.best = metric;
            self.bad_epochs = 0;
            return lr;
        }
        self.bad_epochs += 1;
        if self.bad_epochs > self.patience {
            self.bad_epochs = 0;
            return lr * self.factor;
        }
        lr
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_hi: f64,
    pub l_re: f64,
    pub l_total: f64,
    pub val_l_total: f64,
    /// Rate used during this epoch.
    pub lr: f64,
    pub wall_ms: Option<u64>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: EfdrModel<f32>,
    pub records: Vec<EpochRecord>,
}

struct Sample {
    cover: Tensor<f32>,
    secret: Tensor<f32>,
    decode: usize,
}

struct Prepared {
    covers: Vec<SubbandMap>,
    secrets: Vec<SubbandMap>,
    decoders: Vec<Tensor<f32>>,
    decoder_of: Vec<usize>,
}

fn prepare(pairs: &[super::LoadedPair]) -> Result<Prepared, PipelineError> {
    let mut index: HashMap<[QuantTable; 3], usize> = HashMap::new();
    let mut decoders = Vec::new();
    let mut decoder_of = Vec::new();
    let mut covers = Vec::new();
    let mut secrets = Vec::new();
    for p in pairs {
        let tables = p.cover.channel_quants();
        let id = *index.entry(tables).or_insert_with(|| {
            decoders.push(matrix_tensor(&decode_matrix(&tables)));
            decoders.len() - 1
        });
        decoder_of.push(id);
        covers.push(coefficients_to_subbands(&p.cover.coefficients));
        secrets.push(secret_to_subbands(&p.secret)?);
    }
    Ok(Prepared { covers, secrets, decoders, decoder_of })
}

/// Records the losses of a list of samples; returns the mean total loss
/// node and per-sample `(l_hi, l_re)` nodes.
fn batch_graph(
    g: &mut Graph<f32>,
    model: &EfdrModel<f32>,
    samples: &[Sample],
    decoders: &[Tensor<f32>],
    secret_m: &Tensor<f32>,
) -> Result<(Var, Vec<(Var, Var)>), PipelineError> {
    let sm = g.constant(secret_m.clone());
    let mut dvars: HashMap<usize, Var> = HashMap::new();
    let mut parts = Vec::with_capacity(samples.len());
    let mut total: Option<Var> = None;
    for s in samples {
        let d = *dvars.entry(s.decode).or_insert_with(|| g.constant(decoders[s.decode].clone()));
        let c = g.constant(s.cover.clone());
        let x = g.constant(s.secret.clone());
        let (st, _) = model.forward_graph(g, c, x)?;
        let l_hi = hiding_loss_graph(g, st, c, d)?;
        let aux = g.constant(Tensor::zeros(s.cover.shape()));
        let (_, rec) = model.inverse_graph(g, st, aux)?;
        let l_re = revealing_loss_graph(g, rec, x, sm)?;
        let t = g.add(l_hi, l_re)?;
        total = Some(match total {
            Some(acc) => g.add(acc, t)?,
            None => t,
        });
        parts.push((l_hi, l_re));
    }
    let total = total.ok_or_else(|| PipelineError::Dataset("empty batch".into()))?;
    let loss = g.scale(total, 1.0 / samples.len() as f64)?;
    Ok((loss, parts))
}

fn sample(p: &Prepared, cover: usize, secret: usize) -> Sample {
    Sample { cover: map_to_tensor(&p.covers[cover]), secret: map_to_tensor(&p.secrets[secret]), decode: p.decoder_of[cover] }
}

/// Trains a model on a prepared dataset, writing `metrics.jsonl`, periodic
/// checkpoints and the final `model.efdr` into `out_dir`. Starts from `init`
/// (keeping its normalization) when given, otherwise from a fresh model
/// whose normalization is fitted to the training split. `on_epoch` sees
/// every record as it is logged.
pub fn train(
    config: &TrainConfig,
    dataset: &Dataset,
    out_dir: &Path,
    init: Option<EfdrModel<f32>>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, PipelineError> {
    config.validate()?;
    let pairs = dataset.load()?;
    if pairs.is_empty() {
        return Err(PipelineError::Dataset("no training pairs".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| PipelineError::io(out_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let data = prepare(&pairs)?;
    let secret_m = matrix_tensor::<f32>(&secret_matrix());

    let n = pairs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = if n < 2 || config.val_fraction == 0.0 {
        0
    } else {
        ((n as f64 * config.val_fraction).round() as usize).clamp(1, n - 1)
    };
    let (val_idx, train_idx) = order.split_at(n_val);
    let (val_idx, train_idx) = (val_idx.to_vec(), train_idx.to_vec());
    // Validation keeps the manifest pairing; cover i's secret is pair i's.
    let val_samples: Vec<Sample> = val_idx.iter().map(|&i| sample(&data, i, i)).collect();

    let mut model = match init {
        Some(m) => {
            if m.config != config.model {
                return Err(PipelineError::Config("initial model hyperparameters differ from the configuration".into()));
            }
            m
        }
        None => {
            let mut m = EfdrModel::<f32>::new(config.model.clone(), &mut rng)?;
            m.norm = SubbandNorm::fit(train_idx.iter().map(|&i| (&data.covers[i], &data.secrets[i])))?;
            m
        }
    };
    let mut adam = Adam::new(config.adam, &model.params);
    let mut sched = PlateauScheduler::new(config.plateau_factor, config.plateau_patience);
    let pairs_per_batch = config.batch_size / 2;

    let log_path = out_dir.join(LOG_NAME);
    let mut log = fs::File::create(&log_path).map_err(|e| PipelineError::io(&log_path, e))?;
    let extras: Vec<(String, String)> = config.to_records().into_iter().map(|(k, v)| (format!("train.{k}"), v)).collect();
    let start = Instant::now();
    let mut records = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let lr = adam.config.lr;
        let mut covers = train_idx.clone();
        let mut secrets = train_idx.clone();
        covers.shuffle(&mut rng);
        secrets.shuffle(&mut rng);
        let (mut sum_hi, mut sum_re) = (0.0, 0.0);
        for chunk in covers.iter().zip(&secrets).collect::<Vec<_>>().chunks(pairs_per_batch) {
            let samples: Vec<Sample> = chunk.iter().map(|(&c, &s)| sample(&data, c, s)).collect();
            let mut g = Graph::new();
            let (loss, parts) = batch_graph(&mut g, &model, &samples, &data.decoders, &secret_m)?;
            for (h, r) in parts {
                sum_hi += g.value(h).item() as f64;
                sum_re += g.value(r).item() as f64;
            }
            g.backward(loss)?;
            let grads = g.param_grads(&model.params);
            adam.step(&mut model.params, &grads)?;
            model.refresh_after_step()?;
        }
        let count = train_idx.len() as f64;
        let (l_hi, l_re) = (sum_hi / count, sum_re / count);
        let val_l_total = if val_samples.is_empty() {
            l_hi + l_re
        } else {
            let mut total = 0.0;
            for s in val_samples.chunks(pairs_per_batch) {
                let mut g = Graph::inference();
                let (_, parts) = batch_graph(&mut g, &model, s, &data.decoders, &secret_m)?;
                for (h, r) in parts {
                    total += g.value(h).item() as f64 + g.value(r).item() as f64;
                }
            }
            total / val_samples.len() as f64
        };
        adam.config.lr = sched.step(val_l_total, lr);
        let record = EpochRecord {
            epoch,
            l_hi,
            l_re,
            l_total: l_hi + l_re,
            val_l_total,
            lr,
            wall_ms: config.log_wall_time.then(|| start.elapsed().as_millis() as u64),
        };
        let line = serde_json::to_string(&record).expect("plain record");
        writeln!(log, "{line}").map_err(|e| PipelineError::io(&log_path, e))?;
        on_epoch(&record);
        records.push(record);
        if config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 && epoch < config.epochs {
            let mut meta = extras.clone();
            meta.push(("epoch".into(), epoch.to_string()));
            model.save(&out_dir.join(format!("checkpoint_epoch{epoch:04}.efdr")), &meta)?;
        }
    }
    log.flush().map_err(|e| PipelineError::io(&log_path, e))?;
    let mut meta = extras;
    meta.push(("epoch".into(), config.epochs.to_string()));
    model.save(&out_dir.join(CHECKPOINT_NAME), &meta)?;
    Ok(TrainOutcome { model, records })
}
