use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Variant};
use crate::error::{Error, Result};
use crate::eval::{Metrics, Protocol};

/// Outcome of one grid cell repeat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub variant: Variant,
    pub protocol: Protocol,
    pub fraction: f64,
    pub repeat: usize,
    pub seed: u64,
    /// Test-set metrics; `None` when the run failed.
    pub metrics: Option<Metrics>,
    pub val: Option<Metrics>,
    pub best_epoch: Option<usize>,
    pub error: Option<String>,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub wall_time_s: f64,
    /// Pretrained checkpoint, relative to the report directory.
    pub checkpoint: Option<String>,
    pub config: ExperimentConfig,
}

impl RunRecord {
    pub fn key(&self) -> CellKey {
        CellKey::new(self.variant, self.protocol, self.fraction)
    }

    pub fn file_name(&self) -> String {
        record_file_name(self.variant, self.protocol, self.fraction, self.repeat)
    }
}

pub fn record_file_name(variant: Variant, protocol: Protocol, fraction: f64, repeat: usize) -> String {
    format!("{variant}_{protocol}_f{fraction}_r{repeat}.json")
}

/// Grid cell identity, ordered by variant, protocol, then fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub variant: Variant,
    pub protocol: Protocol,
    fraction_bits: u64,
}

impl CellKey {
    pub fn new(variant: Variant, protocol: Protocol, fraction: f64) -> Self {
        // Bit order matches numeric order for positive floats.
        Self {
            variant,
            protocol,
            fraction_bits: fraction.to_bits(),
        }
    }

    pub fn fraction(&self) -> f64 {
        f64::from_bits(self.fraction_bits)
    }
}

/// Mean, sample standard deviation (only for n > 1) and range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sd: Option<f64>,
    pub min: f64,
    pub max: f64,
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = (n > 1).then(|| {
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        (ss / (n - 1) as f64).sqrt()
    });
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // Rounding can push the mean of equal values a hair outside the range.
    Some(Summary {
        n,
        mean: mean.clamp(min, max),
        sd,
        min,
        max,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub repeat: usize,
    pub seed: u64,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub repeat: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub variant: Variant,
    pub protocol: Protocol,
    pub fraction: f64,
    pub runs: Vec<RunResult>,
    pub failures: Vec<RunFailure>,
    pub accuracy: Option<Summary>,
    pub macro_f1: Option<Summary>,
}

/// Aggregated benchmark results. Holds no timing information, so a rerun
/// with the same configuration reproduces it byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub cells: Vec<CellSummary>,
}

impl MetricsReport {
    pub fn cell(&self, variant: Variant, protocol: Protocol, fraction: f64) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.variant == variant && c.protocol == protocol && c.fraction == fraction)
    }
}

/// Groups records by (variant, protocol, fraction) and summarizes each
/// group. Repeats must be unique within a group.
pub fn aggregate(records: &[RunRecord]) -> Result<Vec<CellSummary>> {
    let mut groups: BTreeMap<CellKey, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        if !(r.fraction > 0.0 && r.fraction <= 1.0) {
            return Err(Error::Contract(format!("record fraction {} outside (0, 1]", r.fraction)));
        }
        groups.entry(r.key()).or_default().push(r);
    }
    let mut out = Vec::with_capacity(groups.len());
    for (key, mut group) in groups {
        group.sort_by_key(|r| r.repeat);
        if group.windows(2).any(|w| w[0].repeat == w[1].repeat) {
            return Err(Error::Contract(format!(
                "duplicate repeat in cell {}/{}/{}",
                key.variant,
                key.protocol,
                key.fraction()
            )));
        }
        let mut runs = Vec::new();
        let mut failures = Vec::new();
        for r in group {
            match (&r.metrics, &r.error) {
                (Some(m), None) => runs.push(RunResult {
                    repeat: r.repeat,
                    seed: r.seed,
                    metrics: *m,
                }),
                (None, Some(e)) => failures.push(RunFailure {
                    repeat: r.repeat,
                    seed: r.seed,
                    error: e.clone(),
                }),
                _ => {
                    return Err(Error::Contract(format!(
                        "record {} must carry exactly one of metrics and error",
                        r.file_name()
                    )))
                }
            }
        }
        let acc: Vec<f64> = runs.iter().map(|r| r.metrics.accuracy).collect();
        let f1: Vec<f64> = runs.iter().map(|r| r.metrics.macro_f1).collect();
        out.push(CellSummary {
            variant: key.variant,
            protocol: key.protocol,
            fraction: key.fraction(),
            accuracy: summarize(&acc),
            macro_f1: summarize(&f1),
            runs,
            failures,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_summaries() {
        let s = summarize(&[60.0, 60.0, 60.0]).unwrap();
        assert_eq!((s.mean, s.sd), (60.0, Some(0.0)));
        let s = summarize(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.sd), (2.0, Some(1.0)));
        let s = summarize(&[0.25]).unwrap();
        assert_eq!((s.mean, s.sd), (0.25, None));
        assert!(summarize(&[]).is_none());
    }

    #[test]
    fn cell_keys_order_by_fraction() {
        let a = CellKey::new(Variant::Moco, Protocol::Knn, 0.01);
        let b = CellKey::new(Variant::Moco, Protocol::Knn, 0.1);
        assert!(a < b);
        assert_eq!(b.fraction(), 0.1);
    }
}
