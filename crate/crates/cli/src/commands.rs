use std::fs;
use std::path::{Path, PathBuf};

use clab_core::artifact::EncoderCheckpoint;
use clab_core::bench::run::{pretrain_variant, protocol_seed, CONFIG_FILE, TABLES_DIR};
use clab_core::bench::{cell_split, load_report, prepare_data, run_benchmark, write_tables, ExperimentConfig, RunOptions, Variant};
use clab_core::data::{export_folder, generate_synthetic, SyntheticSpec};
use clab_core::eval::{self, EvalOutcome, EvalSplits, Protocol};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0} runs failed; rerun the same command to retry them")]
    Runs(usize),
    #[error(transparent)]
    Core(#[from] clab_core::Error),
}

impl CliError {
    /// 2 for mistakes in the invocation or its inputs, 1 for failures while
    /// running.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_usage() => 2,
            CliError::Core(_) | CliError::Runs(_) => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        CliError::Usage(format!(
            "{}: invalid config field `{}`: {}",
            path.display(),
            e.path(),
            e.inner()
        ))
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(clab_core::Error::from)? + "\n";
    fs::write(path, text).map_err(|source| clab_core::Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| clab_core::Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    Ok(())
}

fn config_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Reads and validates an experiment config. Relative dataset paths resolve
/// against the config's directory.
pub fn load_experiment(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = read_json(path)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let base = config_dir(path);
    cfg.dataset.rebase(&base);
    if let Some(src) = cfg.pretrain_dataset.as_mut() {
        src.rebase(&base);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// `--seed` replaces the spec's location seed; the class seed is kept so
/// the classes look the same.
pub fn gen_data(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut spec = match config {
        Some(path) => read_json(path)?,
        None => SyntheticSpec::new(10, 100, 4, 0),
    };
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    spec.validate()?;
    let ds = generate_synthetic(&spec)?;
    create_dir(out)?;
    let meta = export_folder(&ds, out)?;
    write_json(&out.join("spec.json"), &spec)?;
    println!("wrote {} images and {}", ds.len(), meta.display());
    Ok(())
}

pub fn pretrain(config: &Path, variant: Variant, out: &Path, seed: Option<u64>) -> Result<()> {
    let cfg = load_experiment(config, seed)?;
    let data = prepare_data(&cfg)?;
    create_dir(out)?;
    write_json(&out.join(CONFIG_FILE), &cfg)?;
    pretrain_variant(&cfg, variant, &data, out)?;
    println!(
        "wrote {}",
        out.join(clab_core::bench::run::checkpoint_rel_path(variant)).display()
    );
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct Cell {
    pub protocol: Protocol,
    pub fraction: f64,
    pub repeat: usize,
}

/// Written by `evaluate`: the outcome together with everything needed to
/// reproduce it.
#[derive(Debug, Serialize)]
struct EvaluationRecord<'a> {
    checkpoint: &'a Path,
    fraction: f64,
    repeat: usize,
    seed: u64,
    outcome: EvalOutcome,
    train_size: usize,
    val_size: usize,
    test_size: usize,
    config: &'a ExperimentConfig,
}

pub fn evaluate(config: &Path, checkpoint: &Path, cell: Cell, out: &Path, seed: Option<u64>) -> Result<()> {
    let cfg = load_experiment(config, seed)?;
    if !(cell.fraction > 0.0 && cell.fraction <= 1.0) {
        return Err(CliError::Usage(format!("--fraction {} is outside (0, 1]", cell.fraction)));
    }
    let (ckpt, _) = EncoderCheckpoint::load(checkpoint)?;
    if ckpt.encoder.config().input != cfg.encoder.input {
        return Err(CliError::Usage(format!(
            "{} was trained on {:?} images but the config describes {:?}",
            checkpoint.display(),
            ckpt.encoder.config().input,
            cfg.encoder.input
        )));
    }
    let data = prepare_data(&cfg)?;
    let split = cell_split(&cfg, &data.pool, cell.fraction, cell.repeat)?;
    let seed = protocol_seed(cfg.seed, cell.fraction, cell.repeat, cell.protocol);
    let outcome = eval::evaluate(
        &ckpt,
        EvalSplits {
            train: &split.fit,
            val: &split.val,
            test: &data.test,
        },
        cell.protocol,
        &cfg.eval,
        &cfg.ssl.augmentation,
        seed,
    )?;
    println!(
        "{} f={} r={}: macro F1 {:.4}, accuracy {:.4}",
        cell.protocol, cell.fraction, cell.repeat, outcome.test.macro_f1, outcome.test.accuracy
    );
    let stem = checkpoint.file_stem().and_then(|s| s.to_str()).unwrap_or("checkpoint");
    let path = out.join(format!("{stem}_{}_f{}_r{}.json", cell.protocol, cell.fraction, cell.repeat));
    let record = EvaluationRecord {
        checkpoint,
        fraction: cell.fraction,
        repeat: cell.repeat,
        seed,
        outcome,
        train_size: split.fit.len(),
        val_size: split.val.len(),
        test_size: data.test.len(),
        config: &cfg,
    };
    create_dir(out)?;
    write_json(&path, &record)?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn benchmark(config: &Path, out: &Path, jobs: Option<usize>, seed: Option<u64>) -> Result<()> {
    let cfg = load_experiment(config, seed)?;
    let jobs = match jobs {
        Some(0) => return Err(CliError::Usage("--jobs must be at least 1".into())),
        Some(j) => j,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let report = run_benchmark(&cfg, out, RunOptions { jobs })?;
    let failed: usize = report.cells.iter().map(|c| c.failures.len()).sum();
    println!("wrote {} cells to {}", report.cells.len(), out.display());
    if failed > 0 {
        return Err(CliError::Runs(failed));
    }
    Ok(())
}

pub fn report(dir: &Path, out: Option<&Path>) -> Result<()> {
    let report = load_report(dir).map_err(|e| match e {
        clab_core::Error::Io { path, .. } => CliError::Usage(format!("{} has no readable report: {}", dir.display(), path.display())),
        other => other.into(),
    })?;
    let tables = out.map_or_else(|| dir.join(TABLES_DIR), Path::to_path_buf);
    for path in write_tables(&report, &tables)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}
