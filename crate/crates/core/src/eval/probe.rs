use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{gather_rows, FeatureBank};
use super::metrics::{metrics, Metrics};
use crate::error::{Error, Result};
use crate::nn::{argmax_rows, sgd_step, Graph, LinearHead, LrSchedule, ParamSet, Tensor};
use crate::seed::{derive, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation-loss improvement before stopping.
    pub early_stop_patience: usize,
    /// Plateau schedule patience (epochs) and factor.
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Scale feature rows to unit norm before training and prediction.
    pub normalize_features: bool,
    /// Return the head of the best validation-accuracy epoch rather than
    /// the last one.
    pub restore_best: bool,
    pub shuffle: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            lr: 1.0,
            batch_size: 64,
            max_epochs: 100,
            early_stop_patience: 10,
            plateau_patience: 5,
            plateau_factor: 0.5,
            momentum: 0.9,
            weight_decay: 0.0,
            normalize_features: false,
            restore_best: true,
            shuffle: true,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self, field: &str) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("{field}.lr"), "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config(format!("{field}.batch_size"), "must be positive"));
        }
        if self.early_stop_patience == 0 {
            return Err(Error::config(format!("{field}.early_stop_patience"), "must be at least 1"));
        }
        self.schedule().validate(field)?;
        crate::nn::SgdConfig {
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
        .validate(field)
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule::Plateau {
            base: self.lr,
            patience: self.plateau_patience,
            factor: self.plateau_factor,
            min_delta: 0.0,
        }
    }
}

/// Per-epoch training trace. Epoch 0 is the untrained initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: Option<f64>,
    pub val_loss: f64,
    pub val: Metrics,
}

/// Tracks validation history, best epoch and early stopping.
#[derive(Debug, Default)]
pub(crate) struct Progress {
    pub history: Vec<EpochRecord>,
    pub best: Option<(usize, f64)>,
    best_loss: f64,
    stale: usize,
}

impl Progress {
    pub fn new() -> Self {
        Self {
            best_loss: f64::INFINITY,
            ..Self::default()
        }
    }

    /// Records an epoch; returns whether it is the new best by accuracy.
    pub fn record(&mut self, rec: EpochRecord) -> bool {
        if rec.val_loss < self.best_loss {
            self.best_loss = rec.val_loss;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        let improved = self.best.is_none_or(|(_, acc)| rec.val.accuracy > acc);
        if improved {
            self.best = Some((rec.epoch, rec.val.accuracy));
        }
        self.history.push(rec);
        improved
    }

    /// Validation losses of completed training epochs (initial evaluation
    /// excluded), as consumed by the plateau schedule.
    pub fn val_losses(&self) -> Vec<f64> {
        self.history.iter().skip(1).map(|r| r.val_loss).collect()
    }

    pub fn should_stop(&self, patience: usize) -> bool {
        self.stale >= patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best.map_or(0, |(e, _)| e)
    }
}

pub(crate) fn check_finite_loss(loss: f64, epoch: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite training loss at epoch {epoch}")))
    }
}

/// Mean cross-entropy and metrics of `logits` against `labels`.
pub(crate) fn score(logits: &Tensor, labels: &[usize], num_classes: usize) -> Result<(f64, Metrics)> {
    let mut g = Graph::no_grad();
    let x = g.input(logits.clone());
    let loss = g.cross_entropy(x, labels)?;
    let loss = g.value(loss).data()[0];
    Ok((loss, metrics(&argmax_rows(logits), labels, num_classes)?))
}

pub(crate) fn epoch_order(n: usize, seed: u64, epoch: usize, shuffle: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, &[tag::EPOCH, epoch as u64]));
        order.shuffle(&mut rng);
    }
    order
}

/// A trained classifier on top of frozen features.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeOutcome {
    pub head: LinearHead,
    pub params: ParamSet,
    pub normalize_features: bool,
    pub best_epoch: usize,
    pub val: Metrics,
    pub history: Vec<EpochRecord>,
}

impl ProbeOutcome {
    pub fn predict(&self, features: &FeatureBank) -> Result<Vec<usize>> {
        let features = if self.normalize_features {
            features.normalized()
        } else {
            features.clone()
        };
        Ok(argmax_rows(&self.head.logits(&self.params, features.features())?))
    }
}

/// Trains a linear classifier on frozen features with cross-entropy and a
/// plateau schedule, stopping once the validation loss stalls.
pub fn linear_probe(
    train: &FeatureBank,
    val: &FeatureBank,
    num_classes: usize,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<ProbeOutcome> {
    cfg.validate("linear")?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Contract("linear probe needs non-empty train and validation banks".into()));
    }
    if train.dim() != val.dim() {
        return Err(Error::Contract("train and validation feature dims differ".into()));
    }
    let (train, val) = if cfg.normalize_features {
        (train.normalized(), val.normalized())
    } else {
        (train.clone(), val.clone())
    };
    let head = LinearHead {
        inputs: train.dim(),
        classes: num_classes,
    };
    let mut params = head.init(derive(seed, &[tag::INIT]));
    let schedule = cfg.schedule();
    let evaluate = |params: &ParamSet| -> Result<(f64, Metrics)> {
        score(&head.logits(params, val.features())?, val.labels(), num_classes)
    };

    let mut progress = Progress::new();
    let (val_loss, val_metrics) = evaluate(&params)?;
    progress.record(EpochRecord {
        epoch: 0,
        lr: schedule.base(),
        train_loss: None,
        val_loss,
        val: val_metrics,
    });
    let mut best = params.clone();

    for epoch in 1..=cfg.max_epochs {
        if progress.should_stop(cfg.early_stop_patience) {
            break;
        }
        let lr = schedule.rate(epoch as u64 - 1, &progress.val_losses());
        let order = epoch_order(train.len(), seed, epoch, cfg.shuffle);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let x = gather_rows(train.features(), chunk)?;
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels()[i]).collect();
            let mut g = Graph::new();
            let bound = g.bind(&params);
            let xv = g.input(x);
            let logits = head.forward_graph(&mut g, &bound, xv)?;
            let loss = g.cross_entropy(logits, &labels)?;
            let value = g.value(loss).data()[0];
            check_finite_loss(value, epoch)?;
            total += value * chunk.len() as f64;
            let grads = g.backward(loss)?;
            params.zero_grad();
            grads.accumulate_into(&bound, &mut params)?;
            sgd_step(&mut params, lr, cfg.momentum, cfg.weight_decay)
                .map_err(|e| match e {
                    Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}: {m}")),
                    other => other,
                })?;
            params.zero_grad();
        }
        let (val_loss, val_metrics) = evaluate(&params).map_err(|e| match e {
            Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}: {m}")),
            other => other,
        })?;
        let improved = progress.record(EpochRecord {
            epoch,
            lr,
            train_loss: Some(total / train.len() as f64),
            val_loss,
            val: val_metrics,
        });
        if improved {
            best = params.clone();
        }
    }

    let (params, best_epoch) = if cfg.restore_best {
        (best, progress.best_epoch())
    } else {
        (params, progress.history.last().map_or(0, |r| r.epoch))
    };
    let val_metrics = progress.history[best_epoch].val;
    Ok(ProbeOutcome {
        head,
        params: params.weights_only(),
        normalize_features: cfg.normalize_features,
        best_epoch,
        val: val_metrics,
        history: progress.history,
    })
}
