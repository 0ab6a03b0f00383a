use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::artifact::EncoderCheckpoint;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::checkpoint::{self, TensorMap};
use crate::nn::functional::normalize_into;
use crate::nn::{Output, Tensor};

const EXTRACT_CHUNK: usize = 256;

/// Backbone features of a labeled set, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBank {
    features: Tensor,
    labels: Vec<usize>,
    normalized: bool,
}

impl FeatureBank {
    pub fn new(features: Tensor, labels: Vec<usize>) -> Result<Self> {
        let (n, _) = features.matrix_dims()?;
        if n != labels.len() {
            return Err(Error::Contract(format!("{n} feature rows for {} labels", labels.len())));
        }
        Ok(Self {
            features,
            labels,
            normalized: false,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Copy with every row scaled to unit norm (zero rows stay zero).
    pub fn normalized(&self) -> FeatureBank {
        let d = self.dim();
        let mut data = vec![0.0; self.features.numel()];
        for (src, dst) in self.features.data().chunks(d).zip(data.chunks_mut(d)) {
            normalize_into(src, dst);
        }
        FeatureBank {
            features: Tensor::new(self.features.shape().to_vec(), data).expect("same shape"),
            labels: self.labels.clone(),
            normalized: true,
        }
    }

    /// Rows `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<FeatureBank> {
        let features = gather_rows(&self.features, indices)?;
        Ok(FeatureBank {
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            normalized: self.normalized,
        })
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &FeatureBank) -> Result<FeatureBank> {
        if self.dim() != other.dim() || self.normalized != other.normalized {
            return Err(Error::Contract("cannot concatenate incompatible feature banks".into()));
        }
        let mut data = self.features.data().to_vec();
        data.extend_from_slice(other.features.data());
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Ok(FeatureBank {
            features: Tensor::new(vec![labels.len(), self.dim()], data)?,
            labels,
            normalized: self.normalized,
        })
    }

    /// CSV with a `label,f0,f1,...` header; values use shortest round-trip
    /// formatting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label");
        for j in 0..self.dim() {
            let _ = write!(out, ",f{j}");
        }
        out.push('\n');
        for (i, label) in self.labels.iter().enumerate() {
            let _ = write!(out, "{label}");
            for v in self.row(i) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Stores `features` and `labels` tensors in the checkpoint format.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut map = TensorMap::new();
        map.insert("features".into(), self.features.clone());
        map.insert(
            "labels".into(),
            Tensor::new(
                vec![self.len()],
                self.labels.iter().map(|&l| l as f64).collect(),
            )?,
        );
        checkpoint::save(path, &map)
    }

    pub fn load(path: &Path) -> Result<FeatureBank> {
        let mut map = checkpoint::load(path)?;
        let missing = |name: &str| Error::Format(format!("{}: missing `{name}` tensor", path.display()));
        let features = map.shift_remove("features").ok_or_else(|| missing("features"))?;
        let labels = map.shift_remove("labels").ok_or_else(|| missing("labels"))?;
        let labels = labels
            .data()
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(Error::Format(format!("{}: invalid label {v}", path.display())))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        FeatureBank::new(features, labels)
    }
}

pub(crate) fn gather_rows(t: &Tensor, indices: &[usize]) -> Result<Tensor> {
    let (n, d) = t.matrix_dims()?;
    if indices.is_empty() {
        return Err(Error::Contract("cannot gather zero rows".into()));
    }
    let mut data = Vec::with_capacity(indices.len() * d);
    for &i in indices {
        if i >= n {
            return Err(Error::Contract(format!("row {i} out of range for {n} rows")));
        }
        data.extend_from_slice(t.row(i));
    }
    Tensor::new(vec![indices.len(), d], data)
}

/// Backbone features of every sample, without augmentation, in dataset
/// order. Chunks are encoded in parallel.
pub fn extract_features(ckpt: &EncoderCheckpoint, dataset: &Dataset) -> Result<FeatureBank> {
    if dataset.image_shape() != ckpt.encoder.config().input {
        return Err(Error::Contract(format!(
            "encoder expects {:?} images, dataset has {:?}",
            ckpt.encoder.config().input,
            dataset.image_shape()
        )));
    }
    if dataset.is_empty() {
        return Err(Error::Contract("feature extraction over an empty dataset".into()));
    }
    let indices: Vec<usize> = (0..dataset.len()).collect();
    let chunks = indices
        .par_chunks(EXTRACT_CHUNK)
        .map(|chunk| {
            let batch = dataset.batch(chunk)?;
            ckpt.encoder.forward(&ckpt.params, &batch, Output::Backbone)
        })
        .collect::<Result<Vec<Tensor>>>()?;
    let d = ckpt.encoder.output_dim(Output::Backbone);
    let mut data = Vec::with_capacity(dataset.len() * d);
    for t in chunks {
        data.extend(t.into_data());
    }
    FeatureBank::new(Tensor::new(vec![dataset.len(), d], data)?, dataset.labels())
}
