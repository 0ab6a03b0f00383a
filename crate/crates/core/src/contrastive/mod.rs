//! Momentum contrast: key queue, InfoNCE with optional false-negative
//! masking, EMA key encoder, and the pretraining loop.

pub mod loss;
pub mod momentum;
pub mod queue;
pub mod train;

pub use loss::info_nce;
pub use momentum::{ema_update, MomentumPair};
pub use queue::{KeyQueue, QueueEntry, UNIT_TOLERANCE};
pub use train::{
    load_pretrain, moco_step, pretrain, save_pretrain, ContrastiveConfig, PretrainConfig, PretrainState,
    ScheduleKind, StepStats,
};
