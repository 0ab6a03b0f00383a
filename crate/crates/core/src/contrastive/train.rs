use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::momentum::MomentumPair;
use super::queue::KeyQueue;
use crate::artifact::{self, CheckpointKind, CheckpointMeta, SIDECAR_SCHEMA};
use crate::data::{sample_pair, stack_images, AugmentationPolicy, LocationId, PairMode, PositivePair, UnlabeledDataset};
use crate::error::{Error, Result};
use crate::nn::checkpoint::{self, TensorMap};
use crate::nn::{Encoder, EncoderConfig, Graph, LrSchedule, Output, SgdConfig};
use crate::seed::{derive, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    pub queue_capacity: usize,
    /// EMA coefficient of the key encoder.
    pub ema: f64,
    pub mode: PairMode,
    /// Drop same-location negatives. Only meaningful in `mocotp` mode; in
    /// `moco` mode every query is its own instance and nothing is masked.
    pub masking: bool,
}

impl ContrastiveConfig {
    pub fn new(mode: PairMode) -> Self {
        Self {
            temperature: 0.2,
            queue_capacity: 1024,
            ema: 0.99,
            mode,
            masking: mode == PairMode::Mocotp,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::config("contrastive.temperature", "must be positive"));
        }
        if self.queue_capacity == 0 {
            return Err(Error::config("contrastive.queue_capacity", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.ema) {
            return Err(Error::config("contrastive.ema", "must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn masks_same_location(&self) -> bool {
        self.masking && self.mode == PairMode::Mocotp
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Cosine,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub encoder: EncoderConfig,
    pub contrastive: ContrastiveConfig,
    pub augmentation: AugmentationPolicy,
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub schedule: ScheduleKind,
    pub sgd: SgdConfig,
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.contrastive.validate()?;
        self.augmentation.validate("pretrain.augmentation")?;
        self.sgd.validate("pretrain.sgd")?;
        if self.batch_size == 0 {
            return Err(Error::config("pretrain.batch_size", "must be positive"));
        }
        if self.batch_size > self.contrastive.queue_capacity {
            return Err(Error::config(
                "pretrain.batch_size",
                "must not exceed contrastive.queue_capacity",
            ));
        }
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return Err(Error::config("pretrain.base_lr", "must be finite and non-negative"));
        }
        if self.augmentation.output_height != self.encoder.input.height
            || self.augmentation.output_width != self.encoder.input.width
        {
            return Err(Error::config(
                "pretrain.augmentation.output_height",
                "augmentation output must match the encoder input size",
            ));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n: usize) -> u64 {
        n.div_ceil(self.batch_size) as u64
    }

    pub fn lr_schedule(&self, n: usize) -> LrSchedule {
        match self.schedule {
            ScheduleKind::Constant => LrSchedule::Constant { base: self.base_lr },
            ScheduleKind::Cosine => LrSchedule::Cosine {
                base: self.base_lr,
                total_steps: self.steps_per_epoch(n) * self.epochs as u64,
            },
        }
    }
}

/// Everything that evolves during contrastive pretraining.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainState {
    pub pair: MomentumPair,
    pub queue: KeyQueue,
    pub epoch: usize,
    pub step: u64,
    /// Mean step loss of each completed epoch.
    pub loss_history: Vec<f64>,
}

impl PretrainState {
    pub fn init(cfg: &PretrainConfig, seed: u64) -> Result<Self> {
        let encoder = Encoder::new(cfg.encoder.clone())?;
        let query = encoder.init(derive(seed, &[tag::INIT]));
        Ok(Self {
            pair: MomentumPair::new(query, cfg.contrastive.ema)?,
            queue: KeyQueue::new(cfg.contrastive.queue_capacity, cfg.encoder.projection_dim)?,
            epoch: 0,
            step: 0,
            loss_history: Vec::new(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    /// Share of queries with at least one same-location entry in the queue.
    pub collision_rate: f64,
}

/// One MoCo update: EMA, key encoding, query encoding, InfoNCE against the
/// queue, SGD on the query encoder, then enqueue of the new keys.
pub fn moco_step(
    encoder: &Encoder,
    pair: &mut MomentumPair,
    queue: &mut KeyQueue,
    batch: &[PositivePair],
    cfg: &ContrastiveConfig,
    sgd: &SgdConfig,
    lr: f64,
) -> Result<StepStats> {
    if batch.is_empty() {
        return Err(Error::Contract("empty contrastive batch".into()));
    }
    pair.ema_update()?;

    let key_batch = stack_images(batch.iter().map(|p| &p.key))?;
    let keys = encoder.forward(&pair.key, &key_batch, Output::Projected)?;

    let locations: Vec<LocationId> = batch.iter().map(|p| p.location).collect();
    let collisions = locations
        .iter()
        .filter(|&&loc| queue.iter().any(|e| e.location == loc))
        .count();

    let mut g = Graph::new();
    let bound = g.bind(&pair.query);
    let x = g.input(stack_images(batch.iter().map(|p| &p.query))?);
    let q = encoder.forward_graph(&mut g, &bound, x, Output::Projected)?;
    let k = g.input(keys.clone());
    let keep = queue.keep_mask(&locations, cfg.masks_same_location());
    let loss = g.info_nce(q, k, queue.matrix(), keep, cfg.temperature)?;
    let loss_value = g.value(loss).data()[0];

    let grads = g.backward(loss)?;
    pair.query.zero_grad();
    grads.accumulate_into(&bound, &mut pair.query)?;
    sgd.step(&mut pair.query, lr)?;
    pair.query.zero_grad();

    queue.enqueue_rows(&keys, &locations)?;
    Ok(StepStats {
        loss: loss_value,
        collision_rate: collisions as f64 / batch.len() as f64,
    })
}

/// Runs contrastive pretraining up to `cfg.epochs`, continuing from
/// `resume` when given. `on_epoch` sees the state after every epoch.
pub fn pretrain(
    data: &UnlabeledDataset,
    cfg: &PretrainConfig,
    seed: u64,
    resume: Option<PretrainState>,
    mut on_epoch: impl FnMut(&PretrainState, &[StepStats]) -> Result<()>,
) -> Result<PretrainState> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Contract("pretraining dataset is empty".into()));
    }
    if data.image_shape().channels != cfg.encoder.input.channels {
        return Err(Error::Contract("dataset channels do not match the encoder".into()));
    }
    let encoder = Encoder::new(cfg.encoder.clone())?;
    let mut state = match resume {
        Some(s) => s,
        None => PretrainState::init(cfg, seed)?,
    };
    let schedule = cfg.lr_schedule(data.len());
    while state.epoch < cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, &[tag::EPOCH, state.epoch as u64]));
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let mut stats = Vec::with_capacity(order.len().div_ceil(cfg.batch_size));
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<PositivePair> = chunk
                .iter()
                .map(|&i| sample_pair(data, i, cfg.contrastive.mode, &cfg.augmentation, &mut rng))
                .collect();
            let lr = schedule.rate(state.step, &[]);
            let s = moco_step(
                &encoder,
                &mut state.pair,
                &mut state.queue,
                &batch,
                &cfg.contrastive,
                &cfg.sgd,
                lr,
            )
            .map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("epoch {}: {msg}", state.epoch)),
                other => other,
            })?;
            state.step += 1;
            stats.push(s);
        }
        let mean = stats.iter().map(|s| s.loss).sum::<f64>() / stats.len() as f64;
        state.loss_history.push(mean);
        state.epoch += 1;
        log::debug!("pretrain epoch {} loss {mean:.5}", state.epoch);
        on_epoch(&state, &stats)?;
    }
    Ok(state)
}

fn meta(
    cfg: &PretrainConfig,
    seed: u64,
    state: &PretrainState,
    experiment: Option<&serde_json::Value>,
) -> Result<CheckpointMeta> {
    Ok(CheckpointMeta {
        schema_version: SIDECAR_SCHEMA,
        kind: CheckpointKind::Contrastive,
        encoder: cfg.encoder.clone(),
        seed,
        epoch: state.epoch,
        loss_history: state.loss_history.clone(),
        config: serde_json::to_value(cfg)?,
        experiment: experiment.cloned(),
    })
}

/// Writes query encoder (with optimizer state), key encoder and queue.
/// `experiment` is recorded verbatim in the sidecar for provenance.
pub fn save_pretrain(
    path: &Path,
    cfg: &PretrainConfig,
    seed: u64,
    state: &PretrainState,
    experiment: Option<&serde_json::Value>,
) -> Result<()> {
    let mut tensors = TensorMap::new();
    checkpoint::insert_params(&mut tensors, artifact::ENCODER_PREFIX, &state.pair.query, true);
    checkpoint::insert_params(&mut tensors, "key", &state.pair.key, false);
    if let Some((emb, locs)) = state.queue.to_tensors() {
        tensors.insert("queue.embeddings".into(), emb);
        tensors.insert("queue.locations".into(), locs);
    }
    tensors.insert(
        "train@step".into(),
        crate::nn::Tensor::scalar(state.step as f64),
    );
    artifact::save(path, &tensors, &meta(cfg, seed, state, experiment)?)
}

/// Restores a pretraining run written by [`save_pretrain`].
pub fn load_pretrain(path: &Path) -> Result<(PretrainConfig, u64, PretrainState)> {
    let (tensors, meta) = artifact::load(path)?;
    if meta.kind != CheckpointKind::Contrastive {
        return Err(Error::Format(format!("{} is not a contrastive checkpoint", path.display())));
    }
    let cfg: PretrainConfig = serde_json::from_value(meta.config.clone())?;
    let query = checkpoint::extract_params(&tensors, artifact::ENCODER_PREFIX)?;
    let key = checkpoint::extract_params(&tensors, "key")?;
    let queue = KeyQueue::from_tensors(
        cfg.contrastive.queue_capacity,
        cfg.encoder.projection_dim,
        tensors.get("queue.embeddings").zip(tensors.get("queue.locations")),
    )?;
    let step = tensors
        .get("train@step")
        .map(|t| t.data()[0] as u64)
        .unwrap_or(0);
    let pair = MomentumPair {
        query,
        key,
        momentum: cfg.contrastive.ema,
    };
    let encoder = Encoder::new(cfg.encoder.clone())?;
    encoder.check_params(&pair.query)?;
    encoder.check_params(&pair.key)?;
    Ok((
        cfg,
        meta.seed,
        PretrainState {
            pair,
            queue,
            epoch: meta.epoch,
            step,
            loss_history: meta.loss_history,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use crate::nn::ImageShape;

    fn tiny_cfg(mode: PairMode) -> PretrainConfig {
        let input = ImageShape::new(8, 8, 3);
        PretrainConfig {
            encoder: EncoderConfig {
                hidden: vec![32],
                feature_dim: 16,
                projection_hidden: vec![16],
                projection_dim: 8,
                ..EncoderConfig::desk_scale(input)
            },
            contrastive: ContrastiveConfig {
                queue_capacity: 32,
                ..ContrastiveConfig::new(mode)
            },
            augmentation: AugmentationPolicy::pretraining(8, 8),
            epochs: 2,
            batch_size: 8,
            base_lr: 0.05,
            schedule: ScheduleKind::Cosine,
            sgd: SgdConfig::default(),
        }
    }

    fn tiny_data() -> UnlabeledDataset {
        let spec = SyntheticSpec {
            image_size: 8,
            ..SyntheticSpec::new(3, 4, 2, 5)
        };
        generate_synthetic(&spec).unwrap().unlabeled()
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let cfg = PretrainConfig {
            epochs: 0,
            ..tiny_cfg(PairMode::Moco)
        };
        let state = pretrain(&tiny_data(), &cfg, 3, None, |_, _| Ok(())).unwrap();
        assert_eq!(state, PretrainState::init(&cfg, 3).unwrap());
        assert!(state.pair.query.values_bit_equal(&state.pair.key));
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let cfg = tiny_cfg(PairMode::Mocotp);
        let data = tiny_data();
        let full = pretrain(&data, &cfg, 9, None, |_, _| Ok(())).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.clab");
        let mut saved = false;
        pretrain(&data, &cfg, 9, None, |s, _| {
            if s.epoch == 1 && !saved {
                save_pretrain(&path, &cfg, 9, s, None)?;
                saved = true;
            }
            Ok(())
        })
        .unwrap();
        let (cfg2, seed, state) = load_pretrain(&path).unwrap();
        assert_eq!(cfg2, cfg);
        let resumed = pretrain(&data, &cfg2, seed, Some(state), |_, _| Ok(())).unwrap();
        assert_eq!(resumed, full);
    }

    #[test]
    fn key_encoder_never_gets_gradients() {
        let cfg = tiny_cfg(PairMode::Mocotp);
        let state = pretrain(&tiny_data(), &cfg, 1, None, |s, _| {
            assert!(!s.pair.key.has_any_grad());
            Ok(())
        })
        .unwrap();
        assert!(!state.pair.key.has_any_grad());
        // 24 samples x 2 epochs overflow the 32-slot queue.
        assert_eq!(state.queue.len(), 32);
    }
}
