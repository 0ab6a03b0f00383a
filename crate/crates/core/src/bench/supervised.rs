use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::SupervisedConfig;
use crate::artifact::EncoderCheckpoint;
use crate::contrastive::ScheduleKind;
use crate::data::{augment, stack_images, AugmentationPolicy, Dataset};
use crate::error::{Error, Result};
use crate::eval::{extract_features, metrics};
use crate::nn::{argmax_rows, EncoderConfig, Graph, LinearHead, LrSchedule, Output, ParamSet};
use crate::seed::{derive, tag};

#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedOutcome {
    /// Backbone for transfer; the head is kept only for diagnostics.
    pub checkpoint: EncoderCheckpoint,
    pub head: ParamSet,
    pub loss_history: Vec<f64>,
    pub train_accuracy: f64,
}

/// Trains encoder and a linear head with cross-entropy on every label of
/// `ds`. The encoder starts from the same initialization as contrastive
/// pretraining with the same seed.
pub fn supervised_pretrain(
    ds: &Dataset,
    encoder_cfg: &EncoderConfig,
    cfg: &SupervisedConfig,
    policy: Option<&AugmentationPolicy>,
    seed: u64,
) -> Result<SupervisedOutcome> {
    if ds.image_shape() != encoder_cfg.input {
        return Err(Error::Contract("dataset image size does not match the encoder".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::config("supervised.batch_size", "must be positive"));
    }
    let mut ckpt = EncoderCheckpoint::fresh(encoder_cfg.clone(), derive(seed, &[tag::INIT]))?;
    let head = LinearHead {
        inputs: encoder_cfg.feature_dim,
        classes: ds.num_classes(),
    };
    let mut head_params = head.init(derive(seed, &[tag::INIT, 1]));
    let steps_per_epoch = ds.len().div_ceil(cfg.batch_size) as u64;
    let schedule = match cfg.schedule {
        ScheduleKind::Constant => LrSchedule::Constant { base: cfg.base_lr },
        ScheduleKind::Cosine => LrSchedule::Cosine {
            base: cfg.base_lr,
            total_steps: steps_per_epoch * cfg.epochs as u64,
        },
    };
    let mut loss_history = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, &[tag::EPOCH, epoch as u64]));
        let mut order: Vec<usize> = (0..ds.len()).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = match policy {
                Some(p) => {
                    let views: Vec<_> = chunk
                        .iter()
                        .map(|&i| augment(&ds.sample(i).image, p, &mut rng))
                        .collect();
                    stack_images(&views)?
                }
                None => ds.batch(chunk)?,
            };
            let labels: Vec<usize> = chunk.iter().map(|&i| ds.sample(i).label).collect();
            let mut g = Graph::new();
            let enc = g.bind(&ckpt.params);
            let hb = g.bind(&head_params);
            let x = g.input(batch);
            let f = ckpt.encoder.forward_graph(&mut g, &enc, x, Output::Backbone)?;
            let logits = head.forward_graph(&mut g, &hb, f)?;
            let loss = g.cross_entropy(logits, &labels)?;
            let value = g.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::Numeric(format!("non-finite supervised loss at epoch {epoch}")));
            }
            total += value * chunk.len() as f64;
            let grads = g.backward(loss)?;
            ckpt.params.zero_grad();
            head_params.zero_grad();
            grads.accumulate_into(&enc, &mut ckpt.params)?;
            grads.accumulate_into(&hb, &mut head_params)?;
            let lr = schedule.rate(step, &[]);
            cfg.sgd.step(&mut ckpt.params, lr)?;
            cfg.sgd.step(&mut head_params, lr)?;
            ckpt.params.zero_grad();
            head_params.zero_grad();
            step += 1;
        }
        loss_history.push(total / ds.len() as f64);
    }
    ckpt.params = ckpt.params.weights_only();
    let head_params = head_params.weights_only();
    let bank = extract_features(&ckpt, ds)?;
    let preds = argmax_rows(&head.logits(&head_params, bank.features())?);
    let train_accuracy = metrics(&preds, bank.labels(), ds.num_classes())?.accuracy;
    Ok(SupervisedOutcome {
        checkpoint: ckpt,
        head: head_params,
        loss_history,
        train_accuracy,
    })
}
