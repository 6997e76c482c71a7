//! MSE training with Adam and the compounding learning-rate decay,
//! seeded shuffling, and checkpoint persistence.

mod checkpoint;
mod optim;

pub use checkpoint::{Checkpoint, DataMeta, NamedTensor, CHECKPOINT_FORMAT};
pub use optim::{Adam, AdamState};

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::data::WindowedDataset;
use crate::error::{Error, Result};
use crate::model::Forecaster;
use crate::params::Ctx;
use crate::tensor::Tensor;

/// How the learning rate shrinks from one epoch to the next.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayMode {
    /// `lr(e) = lr(e−1)·base^e`, i.e. `lr0·base^(e(e+1)/2)`.
    #[default]
    Compounding,
    /// `lr(e) = lr0·base^e`.
    Exponential,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub initial_lr: f64,
    #[serde(default = "default_decay_base")]
    pub lr_decay_base: f64,
    #[serde(default)]
    pub decay: DecayMode,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Global gradient-norm ceiling; off when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_norm: Option<f64>,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_lr() -> f64 {
    0.0005
}
fn default_decay_base() -> f64 {
    0.95
}
fn default_batch() -> usize {
    20
}
fn default_epochs() -> usize {
    50
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            initial_lr: default_lr(),
            lr_decay_base: default_decay_base(),
            decay: DecayMode::default(),
            batch_size: default_batch(),
            epochs: default_epochs(),
            seed: 0,
            clip_norm: None,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.initial_lr >= 0.0 && self.initial_lr.is_finite()) {
            return fail(format!("initial_lr must be finite and non-negative, got {}", self.initial_lr));
        }
        if !(self.lr_decay_base > 0.0 && self.lr_decay_base <= 1.0) {
            return fail(format!("lr_decay_base must lie in (0, 1], got {}", self.lr_decay_base));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return fail("Adam betas must lie in [0, 1)".into());
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return fail("Adam eps must be positive".into());
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return fail(format!("clip_norm must be positive, got {c}"));
            }
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.decay {
            DecayMode::Compounding => lr_schedule(epoch, self.initial_lr, self.lr_decay_base),
            DecayMode::Exponential => exponential_schedule(epoch, self.initial_lr, self.lr_decay_base),
        }
    }
}

/// Compounding decay: epoch 0 runs at `lr0`, and each later epoch `e`
/// multiplies the previous rate by `base^e`, giving `lr0·base^(e(e+1)/2)`.
pub fn lr_schedule(epoch: usize, lr0: f64, base: f64) -> f64 {
    let e = epoch as u64;
    let exponent = e * (e + 1) / 2;
    lr0 * base.powf(exponent as f64)
}

/// Conventional per-epoch decay `lr0·base^e`.
pub fn exponential_schedule(epoch: usize, lr0: f64, base: f64) -> f64 {
    lr0 * base.powf(epoch as f64)
}

/// Model plus optimizer state, advanced one epoch at a time.
#[derive(Clone, Debug)]
pub struct Trainer {
    model: Forecaster,
    config: TrainConfig,
    adam: Adam,
    epoch: usize,
    history: Vec<f64>,
}

impl Trainer {
    pub fn new(model: Forecaster, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = Adam::new(model.params().values(), config.beta1, config.beta2, config.eps);
        Ok(Self { model, config, adam, epoch: 0, history: Vec::new() })
    }

    pub fn model(&self) -> &Forecaster {
        &self.model
    }

    pub fn into_model(self) -> Forecaster {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Overrides the epoch budget, e.g. to continue a resumed run further.
    pub fn set_epochs(&mut self, epochs: usize) {
        self.config.epochs = epochs;
    }

    pub fn optimizer(&self) -> &Adam {
        &self.adam
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Mean window loss of every completed epoch.
    pub fn history(&self) -> &[f64] {
        &self.history
    }

    /// One pass over `data`: a seeded shuffle, then per batch the mean MSE of
    /// its windows, one backward pass per window with gradients accumulated,
    /// and one Adam step. The last batch may be partial. Returns the mean
    /// window loss.
    pub fn train_epoch(&mut self, data: &WindowedDataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Input("training set has no windows".into()));
        }
        let cfg = self.model.config();
        if data.window_len() != cfg.window || data.target_columns() != cfg.target_columns.as_slice() {
            return Err(Error::Config(format!(
                "dataset (window {}, targets {:?}) does not match the model (window {}, targets {:?})",
                data.window_len(),
                data.target_columns(),
                cfg.window,
                cfg.target_columns
            )));
        }
        let epoch = self.epoch;
        let (mut shuffle_rng, mut dropout_rng) = epoch_streams(self.config.seed, epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut shuffle_rng);
        let lr = self.config.lr_at(epoch);

        let mut total = 0.0;
        for (b, batch) in order.chunks(self.config.batch_size).enumerate() {
            let mut grads: Vec<Tensor> =
                self.model.params().values().iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
            let weight = 1.0 / batch.len() as f64;
            for &w in batch {
                let window = &data.windows()[w];
                let mut g = Graph::new();
                let params = self.model.params().bind(&mut g);
                let mut ctx = Ctx::train(&mut g, &params, &mut dropout_rng);
                let out = self.model.forward(&mut ctx, &window.input)?;
                let target = g.constant(window.targets.clone());
                let loss = g.mse(out, target)?;
                let value = g.value(loss).get(0, 0);
                if !value.is_finite() {
                    return Err(self.non_finite(&g, &format!("loss {value} at epoch {epoch}, batch {b}, window {w}")));
                }
                total += value;
                let scaled = g.scale(loss, weight);
                g.backward(scaled)?;
                for (acc, &p) in grads.iter_mut().zip(&params) {
                    if let Some(gp) = g.grad(p) {
                        acc.add_assign(gp);
                    }
                }
            }
            if let Some(i) = grads.iter().position(|t| !t.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of '{}' at epoch {epoch}, batch {b}",
                    self.model.params().names()[i]
                )));
            }
            if let Some(max) = self.config.clip_norm {
                clip_global_norm(&mut grads, max);
            }
            self.adam.step(self.model.params_mut().values_mut(), &grads, lr)?;
        }
        let mean = total / data.len() as f64;
        self.history.push(mean);
        self.epoch += 1;
        Ok(mean)
    }

    /// Trains until `config.epochs` epochs are complete, calling `on_epoch`
    /// after each.
    pub fn run(&mut self, data: &WindowedDataset, mut on_epoch: impl FnMut(&Self) -> Result<()>) -> Result<()> {
        while self.epoch < self.config.epochs {
            self.train_epoch(data)?;
            on_epoch(self)?;
        }
        Ok(())
    }

    fn non_finite(&self, g: &Graph, context: &str) -> Error {
        let detail = match g.first_non_finite() {
            Some((v, _)) if v.index() < self.model.params().len() => {
                format!("parameter '{}'", self.model.params().names()[v.index()])
            }
            Some((v, kind)) => format!("node {} ({kind:?})", v.index()),
            None => "no non-finite tensor recorded".into(),
        };
        Error::NonFinite(format!("{context}; first non-finite tensor: {detail}"))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT,
            model: self.model.config().clone(),
            train: self.config.clone(),
            epoch: self.epoch,
            seed: self.config.seed,
            params: self
                .model
                .params()
                .iter()
                .map(|(_, name, t)| NamedTensor { name: name.to_string(), value: t.clone() })
                .collect(),
            optimizer: self.adam.state(),
            loss_history: self.history.clone(),
            data: None,
        }
    }

    pub fn from_checkpoint(checkpoint: &Checkpoint) -> Result<Self> {
        let model = checkpoint.build_model()?;
        let mut adam =
            Adam::new(model.params().values(), checkpoint.train.beta1, checkpoint.train.beta2, checkpoint.train.eps);
        adam.restore(checkpoint.optimizer.clone())?;
        checkpoint.train.validate()?;
        Ok(Self {
            model,
            config: checkpoint.train.clone(),
            adam,
            epoch: checkpoint.epoch,
            history: checkpoint.loss_history.clone(),
        })
    }
}

/// Shuffle and dropout generators of one epoch. Both derive from the root
/// seed and the epoch number alone, so a run resumed at an epoch boundary
/// draws exactly what the uninterrupted run would have.
pub fn epoch_streams(seed: u64, epoch: usize) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut shuffle = ChaCha8Rng::seed_from_u64(seed);
    shuffle.set_stream(2 * epoch as u64);
    let mut dropout = ChaCha8Rng::seed_from_u64(seed);
    dropout.set_stream(2 * epoch as u64 + 1);
    (shuffle, dropout)
}

fn clip_global_norm(grads: &mut [Tensor], max: f64) {
    let norm = grads.iter().flat_map(|t| t.data()).map(|v| v * v).sum::<f64>().sqrt();
    if norm > max {
        let s = max / norm;
        for t in grads {
            for v in t.data_mut() {
                *v *= s;
            }
        }
    }
}

/// Eval-mode outputs for every window, in window order.
pub fn predict_windows(model: &Forecaster, data: &WindowedDataset) -> Result<Vec<Tensor>> {
    data.windows().iter().map(|w| model.predict(&w.input)).collect()
}

/// Mean eval-mode MSE over the windows of `data`.
pub fn evaluate_loss(model: &Forecaster, data: &WindowedDataset) -> Result<f64> {
    let mut total = 0.0;
    for w in data.windows() {
        let p = model.predict(&w.input)?;
        let d: f64 = p.data().iter().zip(w.targets.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        total += d / p.len() as f64;
    }
    Ok(total / data.len().max(1) as f64)
}

/// `epoch,mean_loss` rows, epochs counted from 0.
pub fn write_loss_history<W: Write>(mut out: W, history: &[f64]) -> Result<()> {
    writeln!(out, "epoch,mean_loss")?;
    for (e, l) in history.iter().enumerate() {
        writeln!(out, "{e},{l}")?;
    }
    Ok(())
}
