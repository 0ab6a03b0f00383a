use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::extract_features;
use super::metrics::Metrics;
use super::probe::{check_finite_loss, epoch_order, score, EpochRecord, Progress};
use crate::artifact::EncoderCheckpoint;
use crate::data::{augment, stack_images, AugmentationPolicy, Dataset};
use crate::error::{Error, Result};
use crate::nn::{argmax_rows, sgd_step, Graph, LinearHead, LrSchedule, Output, ParamSet, SgdConfig};
use crate::seed::{derive, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneConfig {
    pub backbone_lr: f64,
    pub head_lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Apply the augmentation policy to training images.
    pub augment: bool,
    pub restore_best: bool,
    pub shuffle: bool,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            backbone_lr: 3e-4,
            head_lr: 1.0,
            batch_size: 64,
            max_epochs: 100,
            early_stop_patience: 10,
            plateau_patience: 2,
            plateau_factor: 0.5,
            momentum: 0.9,
            weight_decay: 0.0,
            augment: true,
            restore_best: true,
            shuffle: true,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self, field: &str) -> Result<()> {
        if !(self.backbone_lr >= 0.0 && self.backbone_lr.is_finite()) {
            return Err(Error::config(format!("{field}.backbone_lr"), "must be finite and non-negative"));
        }
        if !(self.head_lr > 0.0 && self.head_lr.is_finite()) {
            return Err(Error::config(format!("{field}.head_lr"), "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config(format!("{field}.batch_size"), "must be positive"));
        }
        if self.early_stop_patience == 0 {
            return Err(Error::config(format!("{field}.early_stop_patience"), "must be at least 1"));
        }
        self.schedule(self.head_lr).validate(field)?;
        SgdConfig {
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
        .validate(field)
    }

    fn schedule(&self, base: f64) -> LrSchedule {
        LrSchedule::Plateau {
            base,
            patience: self.plateau_patience,
            factor: self.plateau_factor,
            min_delta: 0.0,
        }
    }
}

/// An adapted encoder with its classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneOutcome {
    pub encoder: EncoderCheckpoint,
    pub head: LinearHead,
    pub head_params: ParamSet,
    pub best_epoch: usize,
    pub val: Metrics,
    pub history: Vec<EpochRecord>,
}

impl FinetuneOutcome {
    pub fn predict(&self, dataset: &Dataset) -> Result<Vec<usize>> {
        let bank = extract_features(&self.encoder, dataset)?;
        Ok(argmax_rows(&self.head.logits(&self.head_params, bank.features())?))
    }
}

fn evaluate(
    encoder: &EncoderCheckpoint,
    head: &LinearHead,
    head_params: &ParamSet,
    val: &Dataset,
) -> Result<(f64, Metrics)> {
    let bank = extract_features(encoder, val)?;
    score(&head.logits(head_params, bank.features())?, bank.labels(), val.num_classes())
}

fn at_epoch(epoch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}: {m}")),
        other => other,
    }
}

/// End-to-end training of encoder backbone and a fresh linear head with
/// separate learning rates and a shared plateau schedule.
pub fn finetune(
    init: &EncoderCheckpoint,
    train: &Dataset,
    val: &Dataset,
    cfg: &FinetuneConfig,
    policy: &AugmentationPolicy,
    seed: u64,
) -> Result<FinetuneOutcome> {
    cfg.validate("finetune")?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Contract("finetuning needs non-empty train and validation sets".into()));
    }
    if train.num_classes() != val.num_classes() {
        return Err(Error::Contract("train and validation label spaces differ".into()));
    }
    let input = init.encoder.config().input;
    if cfg.augment && (policy.output_height != input.height || policy.output_width != input.width) {
        return Err(Error::config(
            "finetune.augmentation",
            "output size must match the encoder input",
        ));
    }
    let num_classes = train.num_classes();
    let head = LinearHead {
        inputs: init.encoder.output_dim(Output::Backbone),
        classes: num_classes,
    };
    let mut encoder = EncoderCheckpoint {
        encoder: init.encoder.clone(),
        params: init.params.weights_only(),
    };
    let mut head_params = head.init(derive(seed, &[tag::INIT]));
    let backbone_schedule = cfg.schedule(cfg.backbone_lr);
    let head_schedule = cfg.schedule(cfg.head_lr);

    let mut progress = Progress::new();
    let (val_loss, val_metrics) = evaluate(&encoder, &head, &head_params, val)?;
    progress.record(EpochRecord {
        epoch: 0,
        lr: cfg.head_lr,
        train_loss: None,
        val_loss,
        val: val_metrics,
    });
    let mut best = (encoder.params.clone(), head_params.clone());

    for epoch in 1..=cfg.max_epochs {
        if progress.should_stop(cfg.early_stop_patience) {
            break;
        }
        let history = progress.val_losses();
        let t = epoch as u64 - 1;
        let (lr_backbone, lr_head) = (backbone_schedule.rate(t, &history), head_schedule.rate(t, &history));
        let order = epoch_order(train.len(), seed, epoch, cfg.shuffle);
        let mut aug_rng = ChaCha8Rng::seed_from_u64(derive(seed, &[tag::EPOCH, epoch as u64, 1]));
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = if cfg.augment {
                let views: Vec<_> = chunk
                    .iter()
                    .map(|&i| augment(&train.sample(i).image, policy, &mut aug_rng))
                    .collect();
                stack_images(&views)?
            } else {
                train.batch(chunk)?
            };
            let labels: Vec<usize> = chunk.iter().map(|&i| train.sample(i).label).collect();
            let mut g = Graph::new();
            let enc_bound = g.bind(&encoder.params);
            let head_bound = g.bind(&head_params);
            let x = g.input(batch);
            let features = encoder
                .encoder
                .forward_graph(&mut g, &enc_bound, x, Output::Backbone)
                .map_err(at_epoch(epoch))?;
            let logits = head.forward_graph(&mut g, &head_bound, features)?;
            let loss = g.cross_entropy(logits, &labels)?;
            let value = g.value(loss).data()[0];
            check_finite_loss(value, epoch)?;
            total += value * chunk.len() as f64;
            let grads = g.backward(loss)?;
            encoder.params.zero_grad();
            head_params.zero_grad();
            grads.accumulate_into(&enc_bound, &mut encoder.params)?;
            grads.accumulate_into(&head_bound, &mut head_params)?;
            sgd_step(&mut encoder.params, lr_backbone, cfg.momentum, cfg.weight_decay)
                .map_err(at_epoch(epoch))?;
            sgd_step(&mut head_params, lr_head, cfg.momentum, cfg.weight_decay).map_err(at_epoch(epoch))?;
            encoder.params.zero_grad();
            head_params.zero_grad();
        }
        let (val_loss, val_metrics) =
            evaluate(&encoder, &head, &head_params, val).map_err(at_epoch(epoch))?;
        let improved = progress.record(EpochRecord {
            epoch,
            lr: lr_head,
            train_loss: Some(total / train.len() as f64),
            val_loss,
            val: val_metrics,
        });
        if improved {
            best = (encoder.params.clone(), head_params.clone());
        }
    }

    let best_epoch = if cfg.restore_best {
        encoder.params = best.0;
        head_params = best.1;
        progress.best_epoch()
    } else {
        progress.history.last().map_or(0, |r| r.epoch)
    };
    encoder.params = encoder.params.weights_only();
    Ok(FinetuneOutcome {
        encoder,
        head,
        head_params: head_params.weights_only(),
        best_epoch,
        val: progress.history[best_epoch].val,
        history: progress.history,
    })
}
