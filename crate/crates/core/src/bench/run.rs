use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{ExperimentConfig, Variant};
use super::render::write_tables;
use super::report::{aggregate, record_file_name, MetricsReport, RunRecord};
use super::subsample::{holdout_split, stratified_subsample, validation_split};
use super::supervised::supervised_pretrain;
use crate::artifact::{CheckpointKind, CheckpointMeta, EncoderCheckpoint, SIDECAR_SCHEMA};
use crate::contrastive::{load_pretrain, pretrain, save_pretrain, PretrainState};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalSplits, Protocol};
use crate::seed::{derive, tag};

pub const REPORT_FILE: &str = "report.json";
pub const CONFIG_FILE: &str = "config.json";
pub const RECORDS_DIR: &str = "records";
pub const TABLES_DIR: &str = "tables";
pub const CHECKPOINTS_DIR: &str = "checkpoints";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Upper bound on concurrently running jobs.
    pub jobs: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { jobs: 1 }
    }
}

/// Test split and pretraining pool derived from an experiment's datasets.
pub struct PreparedData {
    /// Labeled training pool that label fractions are drawn from.
    pub pool: Dataset,
    pub test: Dataset,
    /// Data the pretraining variants see (labels only used by `supervised`).
    pub pretrain: Dataset,
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let full = cfg.dataset.load()?;
    if full.image_shape() != cfg.encoder.input {
        return Err(Error::config(
            "encoder.input",
            format!("dataset images are {:?}", full.image_shape()),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive(cfg.seed, &[tag::SPLIT]));
    let (pool_idx, test_idx) = holdout_split(&full, cfg.test_fraction, &mut rng)?;
    let pool = full.subset(&pool_idx)?;
    let test = full.subset(&test_idx)?;
    let pretrain = match &cfg.pretrain_dataset {
        Some(src) => {
            let ds = src.load()?;
            if ds.image_shape() != cfg.encoder.input {
                return Err(Error::config("pretrain_dataset", "image size does not match the encoder"));
            }
            ds
        }
        None => pool.clone(),
    };
    Ok(PreparedData { pool, test, pretrain })
}

/// Seed shared by every pretraining variant, so all of them start from the
/// same encoder initialization.
pub fn pretrain_seed(master: u64) -> u64 {
    derive(master, &[tag::PRETRAIN])
}

pub fn subset_seed(master: u64, fraction: f64, repeat: usize) -> u64 {
    derive(master, &[tag::SUBSET, fraction.to_bits(), repeat as u64])
}

pub fn protocol_seed(master: u64, fraction: f64, repeat: usize, protocol: Protocol) -> u64 {
    derive(
        master,
        &[tag::PROTOCOL, fraction.to_bits(), repeat as u64, protocol as u64],
    )
}

pub fn checkpoint_rel_path(variant: Variant) -> String {
    format!("{CHECKPOINTS_DIR}/{variant}.clab")
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn static_meta(
    kind: CheckpointKind,
    cfg: &ExperimentConfig,
    seed: u64,
    epochs: usize,
    loss_history: Vec<f64>,
    config: serde_json::Value,
) -> Result<CheckpointMeta> {
    Ok(CheckpointMeta {
        schema_version: SIDECAR_SCHEMA,
        kind,
        encoder: cfg.encoder.clone(),
        seed,
        epoch: epochs,
        loss_history,
        config,
        experiment: Some(serde_json::to_value(cfg)?),
    })
}

/// Produces (or reuses) the encoder checkpoint of one variant.
pub fn pretrain_variant(
    cfg: &ExperimentConfig,
    variant: Variant,
    data: &PreparedData,
    out_dir: &Path,
) -> Result<EncoderCheckpoint> {
    let seed = pretrain_seed(cfg.seed);
    let path = out_dir.join(checkpoint_rel_path(variant));
    let experiment = serde_json::to_value(cfg)?;
    match variant {
        Variant::None => {
            let ckpt = EncoderCheckpoint::fresh(cfg.encoder.clone(), derive(seed, &[tag::INIT]))?;
            let meta = static_meta(CheckpointKind::Init, cfg, seed, 0, Vec::new(), serde_json::to_value(&cfg.encoder)?)?;
            ckpt.save(&path, &meta)?;
            Ok(ckpt)
        }
        Variant::Supervised => {
            let config = serde_json::to_value(&cfg.supervised)?;
            if path.exists() {
                if let Ok((ckpt, meta)) = EncoderCheckpoint::load(&path) {
                    if meta.kind == CheckpointKind::Supervised
                        && meta.config == config
                        && meta.experiment.as_ref() == Some(&experiment)
                    {
                        log::info!("reusing {}", path.display());
                        return Ok(ckpt);
                    }
                }
            }
            log::info!("supervised pretraining on {} samples", data.pretrain.len());
            let policy = cfg.supervised.augment.then_some(&cfg.ssl.augmentation);
            let out = supervised_pretrain(&data.pretrain, &cfg.encoder, &cfg.supervised, policy, seed)?;
            log::info!("supervised train accuracy {:.4}", out.train_accuracy);
            let meta = static_meta(
                CheckpointKind::Supervised,
                cfg,
                seed,
                cfg.supervised.epochs,
                out.loss_history,
                config,
            )?;
            out.checkpoint.save(&path, &meta)?;
            Ok(out.checkpoint)
        }
        Variant::Moco | Variant::Mocotp => {
            let mode = variant.pair_mode().expect("contrastive variant");
            let pcfg = cfg.ssl.pretrain_config(&cfg.encoder, mode);
            let mut resume: Option<PretrainState> = None;
            if path.exists() {
                if let Ok((saved_cfg, saved_seed, state)) = load_pretrain(&path) {
                    if saved_cfg == pcfg && saved_seed == seed && state.epoch <= pcfg.epochs {
                        log::info!("resuming {variant} from epoch {}", state.epoch);
                        resume = Some(state);
                    }
                }
            }
            let unlabeled = data.pretrain.unlabeled();
            let state = pretrain(&unlabeled, &pcfg, seed, resume, |s, stats| {
                let collisions = stats.iter().map(|x| x.collision_rate).sum::<f64>() / stats.len() as f64;
                log::info!(
                    "{variant} epoch {}/{} loss {:.4} collisions {:.3}",
                    s.epoch,
                    pcfg.epochs,
                    s.loss_history.last().copied().unwrap_or(f64::NAN),
                    collisions
                );
                save_pretrain(&path, &pcfg, seed, s, Some(&experiment))
            })?;
            if state.epoch == 0 {
                save_pretrain(&path, &pcfg, seed, &state, Some(&experiment))?;
            }
            EncoderCheckpoint::new(cfg.encoder.clone(), state.pair.query.weights_only())
        }
    }
}

/// Labeled part of the training pool used by one (fraction, repeat) cell.
pub struct CellSplit {
    pub fraction: f64,
    pub repeat: usize,
    pub fit: Dataset,
    pub val: Dataset,
}

/// Draws the labeled subset of `pool` for one cell and splits off its
/// validation part. Every variant and protocol sees the same split.
pub fn cell_split(cfg: &ExperimentConfig, pool: &Dataset, fraction: f64, repeat: usize) -> Result<CellSplit> {
    let mut rng = ChaCha8Rng::seed_from_u64(subset_seed(cfg.seed, fraction, repeat));
    let labeled = pool.subset(&stratified_subsample(pool, fraction, &mut rng)?)?;
    let split = validation_split(&labeled, cfg.val_fraction, &mut rng)?;
    Ok(CellSplit {
        fraction,
        repeat,
        fit: labeled.subset(&split.fit)?,
        val: labeled.subset(&split.val)?,
    })
}

fn cell_splits(cfg: &ExperimentConfig, pool: &Dataset) -> Result<Vec<CellSplit>> {
    let mut fractions = cfg.fractions.clone();
    fractions.sort_by(f64::total_cmp);
    fractions
        .iter()
        .flat_map(|&f| (0..cfg.repeats_at(f)).map(move |r| (f, r)))
        .map(|(f, r)| cell_split(cfg, pool, f, r))
        .collect()
}

fn load_record(path: &Path, cfg: &ExperimentConfig) -> Option<RunRecord> {
    let text = fs::read_to_string(path).ok()?;
    let rec: RunRecord = serde_json::from_str(&text).ok()?;
    (rec.config == *cfg && rec.error.is_none() && rec.metrics.is_some()).then_some(rec)
}

/// Runs the full grid, reusing any completed records and checkpoints in
/// `out_dir`, and writes `report.json`, `records/` and `tables/`.
pub fn run_benchmark(cfg: &ExperimentConfig, out_dir: &Path, opts: RunOptions) -> Result<MetricsReport> {
    cfg.validate()?;
    let config_path = out_dir.join(CONFIG_FILE);
    if let Ok(text) = fs::read_to_string(&config_path) {
        let previous: ExperimentConfig = serde_json::from_str(&text)?;
        if previous != *cfg {
            return Err(Error::Usage(format!(
                "{} holds a different experiment; use a fresh output directory",
                out_dir.display()
            )));
        }
    }
    let data = prepare_data(cfg)?;
    let records_dir = out_dir.join(RECORDS_DIR);
    for dir in [out_dir.to_path_buf(), records_dir.clone(), out_dir.join(CHECKPOINTS_DIR)] {
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    write_json(&config_path, cfg)?;

    let splits = cell_splits(cfg, &data.pool)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| Error::Usage(format!("cannot start worker pool: {e}")))?;

    let checkpoints: Vec<(Variant, std::result::Result<EncoderCheckpoint, String>)> = pool.install(|| {
        cfg.variants
            .par_iter()
            .map(|&v| (v, pretrain_variant(cfg, v, &data, out_dir).map_err(|e| e.to_string())))
            .collect()
    });

    let mut jobs = Vec::new();
    for (variant, ckpt) in &checkpoints {
        for split in &splits {
            for &protocol in &cfg.protocols {
                jobs.push((*variant, ckpt, split, protocol));
            }
        }
    }
    let records: Vec<RunRecord> = pool.install(|| {
        jobs.par_iter()
            .map(|&(variant, ckpt, split, protocol)| {
                let path = records_dir.join(record_file_name(variant, protocol, split.fraction, split.repeat));
                if let Some(rec) = load_record(&path, cfg) {
                    return Ok(rec);
                }
                let seed = protocol_seed(cfg.seed, split.fraction, split.repeat, protocol);
                let start = Instant::now();
                let result = ckpt.as_ref().map_err(|e| format!("pretraining failed: {e}")).and_then(|ckpt| {
                    evaluate(
                        ckpt,
                        EvalSplits {
                            train: &split.fit,
                            val: &split.val,
                            test: &data.test,
                        },
                        protocol,
                        &cfg.eval,
                        &cfg.ssl.augmentation,
                        seed,
                    )
                    .map_err(|e| e.to_string())
                });
                let (metrics, val, best_epoch, error) = match result {
                    Ok(o) => (Some(o.test), o.val, o.best_epoch, None),
                    Err(e) => {
                        log::warn!("{variant}/{protocol}/{}/{}: {e}", split.fraction, split.repeat);
                        (None, None, None, Some(e))
                    }
                };
                if let Some(m) = &metrics {
                    log::info!(
                        "{variant} {protocol} f={} r={} f1={:.4} acc={:.4}",
                        split.fraction,
                        split.repeat,
                        m.macro_f1,
                        m.accuracy
                    );
                }
                let rec = RunRecord {
                    variant,
                    protocol,
                    fraction: split.fraction,
                    repeat: split.repeat,
                    seed,
                    metrics,
                    val,
                    best_epoch,
                    error,
                    train_size: split.fit.len(),
                    val_size: split.val.len(),
                    test_size: data.test.len(),
                    wall_time_s: start.elapsed().as_secs_f64(),
                    checkpoint: Some(checkpoint_rel_path(variant)),
                    config: cfg.clone(),
                };
                write_json(&path, &rec)?;
                Ok(rec)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let report = MetricsReport {
        schema_version: super::config::SCHEMA_VERSION,
        config: cfg.clone(),
        cells: aggregate(&records)?,
    };
    write_json(&out_dir.join(REPORT_FILE), &report)?;
    write_tables(&report, &out_dir.join(TABLES_DIR))?;
    Ok(report)
}

/// Reads `report.json` from a report directory.
pub fn load_report(dir: &Path) -> Result<MetricsReport> {
    let path: PathBuf = dir.join(REPORT_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}
