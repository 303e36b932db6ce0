//! Minibatch Adam training with scheduled sampling and early stopping, shared
//! by the SRNN and the Deep AR baseline.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::Vec4;
use crate::nn::Adam;
use crate::rng::{self, stream, Rng};
use crate::srnn::{self, ElboNoise, SrnnParams};

/// A model trained by maximizing a per-sequence objective.
pub trait Trainable: Clone + Send + Sync {
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    /// Negative objective of one sequence and its gradient.
    fn loss_and_grad(&self, seq: &[Vec4], rng: &mut Rng, teacher_forcing_prob: f64) -> (f64, Vec<f64>);
    /// Objective of one sequence (higher is better).
    fn objective(&self, seq: &[Vec4], rng: &mut Rng, teacher_forcing_prob: f64) -> f64;
}

impl Trainable for SrnnParams {
    fn params(&self) -> &[f64] {
        self.as_slice()
    }

    fn params_mut(&mut self) -> &mut [f64] {
        self.as_mut_slice()
    }

    fn loss_and_grad(&self, seq: &[Vec4], rng: &mut Rng, tf: f64) -> (f64, Vec<f64>) {
        let noise = ElboNoise::sample(rng, seq.len(), tf);
        srnn::loss_and_grad(self, seq, &noise, 1.0)
    }

    fn objective(&self, seq: &[Vec4], rng: &mut Rng, tf: f64) -> f64 {
        let noise = ElboNoise::sample(rng, seq.len(), tf);
        srnn::elbo_with_noise(self, seq, &noise).map_or(f64::NAN, |b| b.elbo)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Explicit per-epoch teacher-forcing probabilities. When absent the
    /// probability decays linearly from 1 to 0 over the first half of
    /// `max_epochs`.
    pub schedule: Option<Vec<f64>>,
    /// Teacher-forcing probability used for the validation objective; fixed
    /// so that epochs are comparable.
    pub validation_teacher_forcing: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 256,
            patience: 50,
            max_epochs: 500,
            seed: 0,
            schedule: None,
            validation_teacher_forcing: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be a finite non-negative number".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.validation_teacher_forcing) {
            return Err(Error::Config("validation teacher forcing must lie in [0, 1]".into()));
        }
        if let Some(s) = &self.schedule {
            if s.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Config("schedule values must lie in [0, 1]".into()));
            }
            if s.windows(2).any(|w| w[1] > w[0]) {
                return Err(Error::Config("schedule must be non-increasing".into()));
            }
        }
        Ok(())
    }

    pub fn teacher_forcing(&self, epoch: usize) -> f64 {
        if let Some(s) = &self.schedule {
            return s.get(epoch).or(s.last()).copied().unwrap_or(1.0);
        }
        let half = self.max_epochs as f64 / 2.0;
        (1.0 - epoch as f64 / half).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sequence training objective over the epoch.
    pub train_elbo: f64,
    /// Mean per-sequence validation objective.
    pub val_elbo: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    pub best: M,
    pub best_epoch: usize,
    pub best_val_elbo: f64,
    pub history: Vec<EpochRecord>,
}

/// Renders the history as `epoch,train_elbo,val_elbo` lines.
pub fn format_history(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_elbo,val_elbo\n");
    for r in history {
        out.push_str(&format!("{},{},{}\n", r.epoch, r.train_elbo, r.val_elbo));
    }
    out
}

/// Mean per-sequence validation objective. The noise of sequence `i` depends
/// only on `(seed, i)`, so the value is reproducible across epochs and calls.
pub fn validation_objective<M: Trainable>(model: &M, val: &[Vec<Vec4>], seed: u64, tf: f64) -> f64 {
    let vals: Vec<f64> = val
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut r = rng::rng_for(seed, &[stream::VALIDATION, i as u64]);
            model.objective(s, &mut r, tf)
        })
        .collect();
    vals.iter().sum::<f64>() / val.len() as f64
}

pub fn train<M: Trainable>(model: M, train_set: &[Vec<Vec4>], val_set: &[Vec<Vec4>], cfg: &TrainConfig) -> Result<TrainOutcome<M>> {
    train_with(model, train_set, val_set, cfg, |_| {})
}

/// Trains `model`, calling `on_epoch` after every epoch, and returns the
/// parameters with the best validation objective.
pub fn train_with<M: Trainable>(
    mut model: M,
    train_set: &[Vec<Vec4>],
    val_set: &[Vec<Vec4>],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<M>> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Config("training and validation sets must be nonempty".into()));
    }
    let n_params = model.params().len();
    let mut adam = Adam::new(n_params, cfg.learning_rate);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best = model.clone();
    let mut best_val = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut history = Vec::new();

    for epoch in 0..cfg.max_epochs {
        let tf = cfg.teacher_forcing(epoch);
        order.shuffle(&mut rng::rng_for(cfg.seed, &[stream::TRAIN, epoch as u64]));
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let parts: Vec<(f64, Vec<f64>)> = chunk
                .par_iter()
                .map(|&i| {
                    let mut r = rng::rng_for(cfg.seed, &[stream::TRAIN, epoch as u64, b as u64, i as u64]);
                    model.loss_and_grad(&train_set[i], &mut r, tf)
                })
                .collect();
            let mut grad = vec![0.0; n_params];
            for (&i, (loss, g)) in chunk.iter().zip(&parts) {
                if !loss.is_finite() || g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Diverged {
                        epoch,
                        batch: b,
                        sequence: i,
                    });
                }
                epoch_loss += loss;
                for (a, v) in grad.iter_mut().zip(g) {
                    *a += v;
                }
            }
            let scale = 1.0 / chunk.len() as f64;
            grad.iter_mut().for_each(|v| *v *= scale);
            adam.step(model.params_mut(), &grad);
            if model.params().iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    sequence: chunk[0],
                });
            }
        }
        let val = validation_objective(&model, val_set, cfg.seed, cfg.validation_teacher_forcing);
        let rec = EpochRecord {
            epoch,
            train_elbo: -epoch_loss / train_set.len() as f64,
            val_elbo: val,
        };
        log::info!("epoch {epoch}: train {:.4} val {:.4} (tf {tf:.3})", rec.train_elbo, rec.val_elbo);
        history.push(rec);
        on_epoch(&rec);
        if val > best_val {
            best_val = val;
            best_epoch = epoch;
            best = model.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_val_elbo: best_val,
        history,
    })
}
