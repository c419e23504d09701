//! Epoch loop shared by every model: mini-batches, clipping, plateau
//! learning-rate decay, early stopping, and best-checkpoint selection.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::optim::{clip_grad_norm, Adam, AdamConfig};
use crate::numerics::layers::apply_bn_updates;
use crate::numerics::{rng, Bound, Ctx, Graph, ParameterSet, Var};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub l2_weight: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub min_lr: f64,
    pub grad_clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            max_epochs: 200,
            early_stop_patience: 10,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 64,
            l2_weight: 1e-5,
            plateau_factor: 0.5,
            plateau_patience: 5,
            min_lr: 1e-6,
            grad_clip_norm: 1.0,
            seed: 0,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        let positive = self.max_epochs > 0
            && self.early_stop_patience > 0
            && self.batch_size >= 2
            && self.plateau_patience > 0
            && self.lr > 0.0
            && self.min_lr > 0.0
            && self.eps > 0.0
            && self.grad_clip_norm > 0.0
            && self.l2_weight >= 0.0
            && self.plateau_factor > 0.0
            && self.plateau_factor < 1.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2);
        if !positive {
            return Err(Error::config(
                "training schedule values must be positive (batch size at least 2)",
            ));
        }
        if self.early_stop_patience >= self.max_epochs {
            return Err(Error::config(format!(
                "early-stop patience {} must be below max epochs {}",
                self.early_stop_patience, self.max_epochs
            )));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.l2_weight,
        }
    }
}

/// Held-out evaluation. `score` drives early stopping (lower is better);
/// `columns` are logged alongside.
#[derive(Clone, Debug, PartialEq)]
pub struct Validation {
    pub score: f64,
    pub columns: Vec<f64>,
}

/// What a model must provide to be trained by [`run_schedule`].
pub trait Objective {
    fn params(&self) -> &ParameterSet;
    fn params_mut(&mut self) -> &mut ParameterSet;
    fn train_len(&self) -> usize;
    /// Names of the per-batch terms returned by [`Objective::batch_loss`].
    fn term_names(&self) -> Vec<String>;
    fn validation_names(&self) -> Vec<String>;
    /// Builds the loss of one mini-batch of training indices on `g`.
    /// Returns the scalar to minimize and the value of each term.
    fn batch_loss(
        &self,
        g: &mut Graph,
        p: &Bound,
        ctx: &mut Ctx<'_>,
        batch: &[usize],
    ) -> Result<(Var, Vec<f64>)>;
    fn validate(&self) -> Result<Validation>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Batch-mean of each training term.
    pub terms: Vec<f64>,
    pub validation: Validation,
    /// Learning rate used during this epoch.
    pub lr: f64,
    pub improved: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlateauEvent {
    pub epoch: usize,
    pub old_lr: f64,
    pub new_lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub term_names: Vec<String>,
    pub validation_names: Vec<String>,
    pub epochs: Vec<EpochRecord>,
    /// Gradient norm after clipping, one entry per optimizer step.
    pub clipped_norms: Vec<f64>,
    pub plateau_events: Vec<PlateauEvent>,
    pub best_epoch: usize,
    pub best_score: f64,
    pub stopped_early: bool,
}

impl TrainLog {
    /// CSV with a header row; numbers use shortest round-trip formatting.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch");
        for n in self.term_names.iter().chain(&self.validation_names) {
            s.push(',');
            s.push_str(n);
        }
        s.push_str(",val_score,lr,improved\n");
        for e in &self.epochs {
            s.push_str(&format!("{}", e.epoch));
            for v in e.terms.iter().chain(&e.validation.columns) {
                s.push_str(&format!(",{v:?}"));
            }
            s.push_str(&format!(
                ",{:?},{:?},{}\n",
                e.validation.score,
                e.lr,
                u8::from(e.improved)
            ));
        }
        s
    }

    pub fn plateau_csv(&self) -> String {
        let mut s = String::from("epoch,old_lr,new_lr\n");
        for e in &self.plateau_events {
            s.push_str(&format!("{},{:?},{:?}\n", e.epoch, e.old_lr, e.new_lr));
        }
        s
    }
}

/// Trains `obj` under `schedule` and leaves the best-scoring parameters in
/// place.
pub fn run_schedule<O: Objective>(obj: &mut O, schedule: &TrainSchedule) -> Result<TrainLog> {
    schedule.validate()?;
    let n = obj.train_len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "training set of {n} samples is too small"
        )));
    }
    let mut opt = Adam::new(schedule.adam(), obj.params());
    let mut shuffle_rng = rng::stream(schedule.seed, rng::streams::SHUFFLE);
    let mut dropout_rng = rng::stream(schedule.seed, rng::streams::DROPOUT);
    let mut log = TrainLog {
        term_names: obj.term_names(),
        validation_names: obj.validation_names(),
        best_score: f64::INFINITY,
        ..Default::default()
    };
    let mut best: Option<ParameterSet> = None;
    let mut bad_epochs = 0;
    let mut plateau_bad = 0;
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 1..=schedule.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sums = alloc::vec![0.0; log.term_names.len()];
        let mut batches = 0usize;
        for (b, batch) in order.chunks(schedule.batch_size).enumerate() {
            if batch.len() < 2 {
                continue;
            }
            let mut g = Graph::new();
            let bound = obj.params().bind(&mut g);
            let mut ctx = Ctx::train(&mut dropout_rng);
            let (loss, terms) = obj.batch_loss(&mut g, &bound, &mut ctx, batch)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    detail: format!("loss {value}"),
                });
            }
            let updates = ctx.take_bn_updates();
            let grads = g.backward(loss)?;
            let ps = obj.params_mut();
            ps.zero_grads();
            ps.accumulate(&bound, &grads);
            let (raw, clipped) = clip_grad_norm(ps, schedule.grad_clip_norm);
            if !raw.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    detail: format!("gradient norm {raw}"),
                });
            }
            log.clipped_norms.push(clipped);
            opt.step(ps);
            apply_bn_updates(ps, updates);
            for (s, t) in sums.iter_mut().zip(&terms) {
                *s += t;
            }
            batches += 1;
        }
        let terms = sums
            .into_iter()
            .map(|s| s / batches.max(1) as f64)
            .collect();
        let validation = obj.validate()?;
        if !validation.score.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: batches,
                detail: format!("validation score {}", validation.score),
            });
        }
        let improved = validation.score < log.best_score;
        let lr = opt.lr;
        log.epochs.push(EpochRecord {
            epoch,
            terms,
            validation: validation.clone(),
            lr,
            improved,
        });
        if improved {
            log.best_score = validation.score;
            log.best_epoch = epoch;
            best = Some(obj.params().clone());
            bad_epochs = 0;
            plateau_bad = 0;
        } else {
            bad_epochs += 1;
            plateau_bad += 1;
        }
        if bad_epochs >= schedule.early_stop_patience {
            log.stopped_early = epoch < schedule.max_epochs;
            break;
        }
        if plateau_bad >= schedule.plateau_patience {
            let new_lr = (opt.lr * schedule.plateau_factor).max(schedule.min_lr);
            if new_lr < opt.lr {
                log.plateau_events.push(PlateauEvent {
                    epoch,
                    old_lr: opt.lr,
                    new_lr,
                });
                opt.lr = new_lr;
            }
            plateau_bad = 0;
        }
    }
    if let Some(best) = best {
        *obj.params_mut() = best;
    }
    Ok(log)
}
