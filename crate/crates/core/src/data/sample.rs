use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ImageShape, Tensor};

/// Index of a geographic location within a dataset's location table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LocationId(pub u32);

/// `H x W x C` image, row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    shape: ImageShape,
    data: Vec<f64>,
}

impl Image {
    pub fn new(shape: ImageShape, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || data.len() != shape.len() {
            return Err(Error::Contract(format!(
                "image {}x{}x{} needs {} values, got {}",
                shape.height,
                shape.width,
                shape.channels,
                shape.len(),
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: ImageShape, value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.shape.width + x) * self.shape.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.index(y, x, c)]
    }

    pub fn clamp_unit(&mut self) {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }
}

/// Stacks equally sized images into a `B x H x W x C` tensor.
pub fn stack_images<'a>(images: impl IntoIterator<Item = &'a Image>) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut shape = None;
    let mut count = 0;
    for img in images {
        match shape {
            None => shape = Some(img.shape()),
            Some(s) if s != img.shape() => {
                return Err(Error::Contract("cannot stack images of different sizes".into()))
            }
            _ => {}
        }
        data.extend_from_slice(img.data());
        count += 1;
    }
    let s = shape.ok_or_else(|| Error::Contract("cannot stack an empty image list".into()))?;
    Tensor::new(vec![count, s.height, s.width, s.channels], data)
}

/// One labeled image patch observed at a location and time.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: Arc<Image>,
    pub label: usize,
    pub location: LocationId,
    pub timestamp: i64,
}

/// Immutable collection of samples sharing one image size.
#[derive(Debug, Clone)]
pub struct Dataset {
    samples: Vec<Sample>,
    shape: ImageShape,
    num_classes: usize,
    location_keys: Vec<String>,
    by_location: Vec<Vec<usize>>,
}

fn index_locations(n_locations: usize, locations: impl Iterator<Item = LocationId>) -> Vec<Vec<usize>> {
    let mut by_location = vec![Vec::new(); n_locations];
    for (i, loc) in locations.enumerate() {
        by_location[loc.0 as usize].push(i);
    }
    by_location
}

impl Dataset {
    /// Validates and indexes `samples`. `location_keys[i]` is the external
    /// name of `LocationId(i)`.
    pub fn new(samples: Vec<Sample>, location_keys: Vec<String>, num_classes: usize) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Ingestion("dataset is empty".into()))?;
        let shape = first.image.shape();
        let mut location_label: BTreeMap<LocationId, usize> = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            if s.image.shape() != shape {
                return Err(Error::Ingestion(format!(
                    "sample {i} is {}x{}x{}, expected {}x{}x{}",
                    s.image.shape().height,
                    s.image.shape().width,
                    s.image.shape().channels,
                    shape.height,
                    shape.width,
                    shape.channels
                )));
            }
            if s.label >= num_classes {
                return Err(Error::Ingestion(format!(
                    "sample {i} has label {} but the dataset has {num_classes} classes",
                    s.label
                )));
            }
            if s.location.0 as usize >= location_keys.len() {
                return Err(Error::Ingestion(format!("sample {i} has an unknown location")));
            }
            let label = *location_label.entry(s.location).or_insert(s.label);
            if label != s.label {
                return Err(Error::Ingestion(format!(
                    "location `{}` carries labels {label} and {}",
                    location_keys[s.location.0 as usize], s.label
                )));
            }
        }
        let by_location = index_locations(location_keys.len(), samples.iter().map(|s| s.location));
        Ok(Self {
            samples,
            shape,
            num_classes,
            location_keys,
            by_location,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &Sample {
        &self.samples[i]
    }

    pub fn image_shape(&self) -> ImageShape {
        self.shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn location_key(&self, loc: LocationId) -> &str {
        &self.location_keys[loc.0 as usize]
    }

    pub fn location_keys(&self) -> &[String] {
        &self.location_keys
    }

    /// Sample indices at `loc`, in dataset order.
    pub fn views_at(&self, loc: LocationId) -> &[usize] {
        &self.by_location[loc.0 as usize]
    }

    /// True when some location holds more than one sample.
    pub fn is_temporal(&self) -> bool {
        self.by_location.iter().any(|v| v.len() > 1)
    }

    /// Dataset restricted to `indices`, in the given order. The location
    /// table and class count are kept.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let samples = indices.iter().map(|&i| self.samples[i].clone()).collect();
        Dataset::new(samples, self.location_keys.clone(), self.num_classes)
    }

    /// Label-free view for self-supervised pretraining.
    pub fn unlabeled(&self) -> UnlabeledDataset {
        UnlabeledDataset {
            images: self.samples.iter().map(|s| Arc::clone(&s.image)).collect(),
            locations: self.samples.iter().map(|s| s.location).collect(),
            timestamps: self.samples.iter().map(|s| s.timestamp).collect(),
            shape: self.shape,
            by_location: self.by_location.clone(),
        }
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        stack_images(indices.iter().map(|&i| self.samples[i].image.as_ref()))
    }
}

/// Images with location and time but no labels. Pretraining only ever sees
/// this type, so it cannot read class information.
#[derive(Debug, Clone)]
pub struct UnlabeledDataset {
    images: Vec<Arc<Image>>,
    locations: Vec<LocationId>,
    timestamps: Vec<i64>,
    shape: ImageShape,
    by_location: Vec<Vec<usize>>,
}

impl UnlabeledDataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image(&self, i: usize) -> &Image {
        &self.images[i]
    }

    pub fn location(&self, i: usize) -> LocationId {
        self.locations[i]
    }

    pub fn timestamp(&self, i: usize) -> i64 {
        self.timestamps[i]
    }

    pub fn image_shape(&self) -> ImageShape {
        self.shape
    }

    pub fn views_at(&self, loc: LocationId) -> &[usize] {
        &self.by_location[loc.0 as usize]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(label: usize, loc: u32) -> Sample {
        Sample {
            image: Arc::new(Image::filled(ImageShape::new(2, 2, 1), 0.5)),
            label,
            location: LocationId(loc),
            timestamp: 0,
        }
    }

    #[test]
    fn location_label_consistency_enforced() {
        let keys = vec!["a".to_string(), "b".to_string()];
        assert!(Dataset::new(vec![sample(0, 0), sample(1, 1)], keys.clone(), 2).is_ok());
        assert!(matches!(
            Dataset::new(vec![sample(0, 0), sample(1, 0)], keys, 2),
            Err(Error::Ingestion(_))
        ));
    }

    #[test]
    fn mixed_sizes_rejected() {
        let mut odd = sample(0, 0);
        odd.image = Arc::new(Image::filled(ImageShape::new(3, 2, 1), 0.5));
        assert!(Dataset::new(vec![sample(0, 0), odd], vec!["a".into()], 1).is_err());
    }

    #[test]
    fn views_grouped_by_location() {
        let keys = vec!["a".to_string(), "b".to_string()];
        let ds = Dataset::new(vec![sample(0, 1), sample(1, 0), sample(0, 1)], keys, 2).unwrap();
        assert_eq!(ds.views_at(LocationId(1)), &[0, 2]);
        assert!(ds.is_temporal());
        assert_eq!(ds.unlabeled().views_at(LocationId(0)), &[1]);
    }
}
