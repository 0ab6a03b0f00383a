use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::contrastive::{ContrastiveConfig, PretrainConfig, ScheduleKind};
use crate::data::{generate_synthetic, load_folder, AugmentationPolicy, Dataset, PairMode, SyntheticSpec};
use crate::error::{Error, Result};
use crate::eval::{EvalConfig, Protocol};
use crate::nn::{EncoderConfig, SgdConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// Where a labeled dataset comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic(SyntheticSpec),
    Folder {
        root: PathBuf,
        /// Defaults to `<root>/metadata.csv`.
        #[serde(default)]
        metadata: Option<PathBuf>,
    },
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSource::Synthetic(spec) => generate_synthetic(spec),
            DatasetSource::Folder { root, metadata } => {
                let meta = metadata
                    .clone()
                    .unwrap_or_else(|| root.join(crate::data::folder::METADATA_FILE));
                load_folder(root, &meta)
            }
        }
    }

    /// Resolves relative folder paths against `base`.
    pub fn rebase(&mut self, base: &Path) {
        if let DatasetSource::Folder { root, metadata } = self {
            if root.is_relative() {
                *root = base.join(&*root);
            }
            if let Some(m) = metadata.as_mut().filter(|m| m.is_relative()) {
                *m = base.join(&*m);
            }
        }
    }
}

/// Encoder initialization for the benchmark's rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Random initialization, no pretraining.
    None,
    Supervised,
    Moco,
    Mocotp,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::None => "none",
            Variant::Supervised => "supervised",
            Variant::Moco => "moco",
            Variant::Mocotp => "mocotp",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Variant::None => "Random init",
            Variant::Supervised => "Supervised",
            Variant::Moco => "MoCo",
            Variant::Mocotp => "MoCoTP",
        }
    }

    pub fn pair_mode(self) -> Option<PairMode> {
        match self {
            Variant::Moco => Some(PairMode::Moco),
            Variant::Mocotp => Some(PairMode::Mocotp),
            _ => None,
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Self-supervised pretraining settings shared by the MoCo variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SslConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub schedule: ScheduleKind,
    pub sgd: SgdConfig,
    pub temperature: f64,
    pub queue_capacity: usize,
    pub ema: f64,
    /// Same-location negative masking for `mocotp`.
    pub masking: bool,
    pub augmentation: AugmentationPolicy,
}

impl SslConfig {
    pub fn desk_scale(image_size: usize) -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            base_lr: 0.03,
            schedule: ScheduleKind::Cosine,
            sgd: SgdConfig::default(),
            temperature: 0.2,
            queue_capacity: 1024,
            ema: 0.99,
            masking: true,
            augmentation: AugmentationPolicy::pretraining_upright(image_size, image_size),
        }
    }

    pub fn pretrain_config(&self, encoder: &EncoderConfig, mode: PairMode) -> PretrainConfig {
        PretrainConfig {
            encoder: encoder.clone(),
            contrastive: ContrastiveConfig {
                temperature: self.temperature,
                queue_capacity: self.queue_capacity,
                ema: self.ema,
                mode,
                masking: self.masking,
            },
            augmentation: self.augmentation.clone(),
            epochs: self.epochs,
            batch_size: self.batch_size,
            base_lr: self.base_lr,
            schedule: self.schedule,
            sgd: self.sgd,
        }
    }
}

/// Supervised pretraining on all labels of the pretraining pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupervisedConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub schedule: ScheduleKind,
    pub sgd: SgdConfig,
    /// Use the SSL augmentation policy on training images.
    pub augment: bool,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            base_lr: 0.03,
            schedule: ScheduleKind::Cosine,
            sgd: SgdConfig::default(),
            augment: true,
        }
    }
}

/// Headline metric of the emitted tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableMetric {
    #[default]
    MacroF1,
    Accuracy,
}

/// Complete description of a benchmark run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub dataset: DatasetSource,
    /// Unlabeled data for pretraining; defaults to the benchmark's own
    /// training pool.
    #[serde(default)]
    pub pretrain_dataset: Option<DatasetSource>,
    /// Share of each class's locations held out for testing.
    pub test_fraction: f64,
    /// Share of each selected class subset used for validation.
    pub val_fraction: f64,
    pub variants: Vec<Variant>,
    pub fractions: Vec<f64>,
    pub repeats: usize,
    pub protocols: Vec<Protocol>,
    pub encoder: EncoderConfig,
    pub ssl: SslConfig,
    #[serde(default)]
    pub supervised: SupervisedConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub table_metric: TableMetric,
}

impl ExperimentConfig {
    /// The default synthetic temporal benchmark: 10 classes, 100 locations
    /// per class, 4 views, 16x16 images.
    pub fn desk_scale(seed: u64) -> Self {
        let spec = SyntheticSpec::new(10, 100, 4, seed);
        let encoder = EncoderConfig::desk_scale(spec.image_shape());
        Self {
            schema_version: SCHEMA_VERSION,
            seed,
            dataset: DatasetSource::Synthetic(spec),
            pretrain_dataset: None,
            test_fraction: 0.2,
            val_fraction: 0.2,
            variants: vec![Variant::None, Variant::Supervised, Variant::Moco, Variant::Mocotp],
            fractions: vec![0.01, 0.1, 1.0],
            repeats: 3,
            protocols: Protocol::ALL.to_vec(),
            encoder,
            ssl: SslConfig::desk_scale(16),
            supervised: SupervisedConfig::default(),
            eval: EvalConfig::default(),
            table_metric: TableMetric::MacroF1,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        if let DatasetSource::Synthetic(spec) = &self.dataset {
            spec.validate()?;
        }
        if let Some(DatasetSource::Synthetic(spec)) = &self.pretrain_dataset {
            spec.validate()?;
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::config("test_fraction", "must lie in (0, 1)"));
        }
        if !(self.val_fraction >= 0.0 && self.val_fraction < 1.0) {
            return Err(Error::config("val_fraction", "must lie in [0, 1)"));
        }
        if self.variants.is_empty() {
            return Err(Error::config("variants", "must name at least one variant"));
        }
        if self.protocols.is_empty() {
            return Err(Error::config("protocols", "must name at least one protocol"));
        }
        if self.fractions.is_empty() {
            return Err(Error::config("fractions", "must list at least one fraction"));
        }
        for &f in &self.fractions {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::config("fractions", format!("{f} is outside (0, 1]")));
            }
        }
        for (name, list_len, dedup_len) in [
            ("variants", self.variants.len(), sorted_dedup(&self.variants)),
            ("protocols", self.protocols.len(), sorted_dedup(&self.protocols)),
        ] {
            if list_len != dedup_len {
                return Err(Error::config(name, "contains duplicates"));
            }
        }
        let mut fr = self.fractions.clone();
        fr.sort_by(f64::total_cmp);
        fr.dedup();
        if fr.len() != self.fractions.len() {
            return Err(Error::config("fractions", "contains duplicates"));
        }
        if self.repeats == 0 {
            return Err(Error::config("repeats", "must be at least 1"));
        }
        self.encoder.validate()?;
        for mode in [PairMode::Moco, PairMode::Mocotp] {
            self.ssl.pretrain_config(&self.encoder, mode).validate()?;
        }
        if self.supervised.batch_size == 0 {
            return Err(Error::config("supervised.batch_size", "must be positive"));
        }
        if !(self.supervised.base_lr >= 0.0 && self.supervised.base_lr.is_finite()) {
            return Err(Error::config("supervised.base_lr", "must be finite and non-negative"));
        }
        self.supervised.sgd.validate("supervised.sgd")?;
        self.eval.validate()
    }

    /// Repeats actually run at `fraction`: the full set has no sampling
    /// variance, so it runs once.
    pub fn repeats_at(&self, fraction: f64) -> usize {
        if fraction >= 1.0 {
            1
        } else {
            self.repeats
        }
    }
}

fn sorted_dedup<T: Ord + Clone>(items: &[T]) -> usize {
    let mut v = items.to_vec();
    v.sort();
    v.dedup();
    v.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_scale_round_trips_and_validates() {
        let cfg = ExperimentConfig::desk_scale(7);
        cfg.validate().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut v = serde_json::to_value(ExperimentConfig::desk_scale(1)).unwrap();
        v["bogus"] = serde_json::json!(1);
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn validation_names_the_field() {
        let mut cfg = ExperimentConfig::desk_scale(1);
        cfg.fractions = vec![0.5, 1.5];
        match cfg.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "fractions"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn full_fraction_runs_once() {
        let cfg = ExperimentConfig::desk_scale(1);
        assert_eq!(cfg.repeats_at(1.0), 1);
        assert_eq!(cfg.repeats_at(0.1), 3);
    }
}
