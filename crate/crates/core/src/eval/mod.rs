//! Evaluation of a frozen or adaptable encoder: weighted k-NN, linear
//! probing, finetuning, and the accuracy / macro-F1 metrics.

pub mod features;
pub mod finetune;
pub mod knn;
pub mod metrics;
pub mod probe;

use serde::{Deserialize, Serialize};

pub use features::{extract_features, FeatureBank};
pub use finetune::{finetune, FinetuneConfig, FinetuneOutcome};
pub use knn::{knn_predict, KnnConfig};
pub use metrics::{metrics, Metrics};
pub use probe::{linear_probe, EpochRecord, ProbeConfig, ProbeOutcome};

use crate::artifact::EncoderCheckpoint;
use crate::data::{AugmentationPolicy, Dataset};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Knn,
    Linear,
    Finetune,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::Knn, Protocol::Linear, Protocol::Finetune];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Knn => "knn",
            Protocol::Linear => "linear",
            Protocol::Finetune => "finetune",
        }
    }
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub knn: KnnConfig,
    pub linear: ProbeConfig,
    pub finetune: FinetuneConfig,
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        self.knn.validate("eval.knn")?;
        self.linear.validate("eval.linear")?;
        self.finetune.validate("eval.finetune")
    }
}

/// Labeled training data (split into fitting and validation parts) and the
/// held-out test set that metrics are reported on.
#[derive(Debug, Clone, Copy)]
pub struct EvalSplits<'a> {
    pub train: &'a Dataset,
    pub val: &'a Dataset,
    pub test: &'a Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub protocol: Protocol,
    pub test: Metrics,
    /// Validation metrics of the selected epoch (trained protocols only).
    pub val: Option<Metrics>,
    pub best_epoch: Option<usize>,
}

/// Runs one protocol and scores it on the test split. k-NN stores both the
/// training and validation parts since it has nothing to tune.
pub fn evaluate(
    ckpt: &EncoderCheckpoint,
    splits: EvalSplits<'_>,
    protocol: Protocol,
    cfg: &EvalConfig,
    policy: &AugmentationPolicy,
    seed: u64,
) -> Result<EvalOutcome> {
    cfg.validate()?;
    let classes = splits.test.num_classes();
    let test_labels = splits.test.labels();
    match protocol {
        Protocol::Knn => {
            let bank = extract_features(ckpt, splits.train)?
                .concat(&extract_features(ckpt, splits.val)?)?;
            let test = extract_features(ckpt, splits.test)?;
            let k = cfg.knn.resolve_k(bank.len());
            let preds = knn_predict(&bank, test.features(), k, cfg.knn.temperature, classes)?;
            Ok(EvalOutcome {
                protocol,
                test: metrics(&preds, &test_labels, classes)?,
                val: None,
                best_epoch: None,
            })
        }
        Protocol::Linear => {
            let train = extract_features(ckpt, splits.train)?;
            let val = extract_features(ckpt, splits.val)?;
            let out = linear_probe(&train, &val, classes, &cfg.linear, seed)?;
            let preds = out.predict(&extract_features(ckpt, splits.test)?)?;
            Ok(EvalOutcome {
                protocol,
                test: metrics(&preds, &test_labels, classes)?,
                val: Some(out.val),
                best_epoch: Some(out.best_epoch),
            })
        }
        Protocol::Finetune => {
            let out = finetune(ckpt, splits.train, splits.val, &cfg.finetune, policy, seed)?;
            let preds = out.predict(splits.test)?;
            Ok(EvalOutcome {
                protocol,
                test: metrics(&preds, &test_labels, classes)?,
                val: Some(out.val),
                best_epoch: Some(out.best_epoch),
            })
        }
    }
}
