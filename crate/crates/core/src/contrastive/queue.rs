use std::collections::VecDeque;

use crate::data::LocationId;
use crate::error::{Error, Result};
use crate::nn::functional::l2_norm;
use crate::nn::Tensor;

/// Tolerance on the unit-norm contract of embeddings.
pub const UNIT_TOLERANCE: f64 = 1e-9;

pub(crate) fn check_unit(what: &str, v: &[f64]) -> Result<()> {
    let n = l2_norm(v);
    if (n - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::Contract(format!("{what} has norm {n}, expected 1")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueueEntry {
    pub embedding: Vec<f64>,
    pub location: LocationId,
}

/// FIFO dictionary of past key embeddings used as negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyQueue {
    capacity: usize,
    dim: usize,
    entries: VecDeque<QueueEntry>,
}

impl KeyQueue {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("contrastive.queue_capacity", "must be positive"));
        }
        Ok(Self {
            capacity,
            dim,
            entries: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &QueueEntry> {
        self.entries.iter()
    }

    /// Appends keys newest-last, evicting the oldest entries on overflow.
    pub fn enqueue(&mut self, keys: &[(&[f64], LocationId)]) -> Result<()> {
        if keys.len() > self.capacity {
            return Err(Error::config(
                "contrastive.queue_capacity",
                format!("batch of {} keys exceeds capacity {}", keys.len(), self.capacity),
            ));
        }
        for (i, (k, _)) in keys.iter().enumerate() {
            if k.len() != self.dim {
                return Err(Error::Contract(format!(
                    "key {i} has dimension {}, queue holds {}",
                    k.len(),
                    self.dim
                )));
            }
            check_unit(&format!("key {i}"), k)?;
        }
        let overflow = (self.entries.len() + keys.len()).saturating_sub(self.capacity);
        self.entries.drain(..overflow);
        self.entries.extend(keys.iter().map(|(k, loc)| QueueEntry {
            embedding: k.to_vec(),
            location: *loc,
        }));
        Ok(())
    }

    /// Enqueues the rows of a `B x d` tensor.
    pub fn enqueue_rows(&mut self, keys: &Tensor, locations: &[LocationId]) -> Result<()> {
        let (b, _) = keys.matrix_dims()?;
        if b != locations.len() {
            return Err(Error::Contract(format!("{b} keys but {} locations", locations.len())));
        }
        let rows: Vec<(&[f64], LocationId)> = (0..b).map(|i| (keys.row(i), locations[i])).collect();
        self.enqueue(&rows)
    }

    /// Row-major `len x dim` copy of the stored embeddings.
    pub fn matrix(&self) -> Vec<f64> {
        self.entries.iter().flat_map(|e| e.embedding.iter().copied()).collect()
    }

    pub fn locations(&self) -> Vec<LocationId> {
        self.entries.iter().map(|e| e.location).collect()
    }

    /// `B x len` mask keeping negatives whose location differs from the
    /// query's (everything is kept when `mask_same_location` is false).
    pub fn keep_mask(&self, query_locations: &[LocationId], mask_same_location: bool) -> Vec<bool> {
        query_locations
            .iter()
            .flat_map(|q| {
                self.entries
                    .iter()
                    .map(move |e| !mask_same_location || e.location != *q)
            })
            .collect()
    }

    /// Tensors for checkpointing: embeddings `[len, dim]` and locations `[len]`.
    pub fn to_tensors(&self) -> Option<(Tensor, Tensor)> {
        if self.entries.is_empty() {
            return None;
        }
        let emb = Tensor::new(vec![self.len(), self.dim], self.matrix()).ok()?;
        let locs = Tensor::new(
            vec![self.len()],
            self.entries.iter().map(|e| e.location.0 as f64).collect(),
        )
        .ok()?;
        Some((emb, locs))
    }

    pub fn from_tensors(capacity: usize, dim: usize, stored: Option<(&Tensor, &Tensor)>) -> Result<Self> {
        let mut q = Self::new(capacity, dim)?;
        if let Some((emb, locs)) = stored {
            let (n, d) = emb.matrix_dims()?;
            if d != dim || n != locs.numel() || n > capacity {
                return Err(Error::Format("queue tensors do not match the configuration".into()));
            }
            for i in 0..n {
                q.entries.push_back(QueueEntry {
                    embedding: emb.row(i).to_vec(),
                    location: LocationId(locs.data()[i] as u32),
                });
            }
        }
        Ok(q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(i: usize, dim: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[i % dim] = 1.0;
        v
    }

    #[test]
    fn empty_then_four() {
        let mut q = KeyQueue::new(8, 3).unwrap();
        let keys: Vec<Vec<f64>> = (0..4).map(|i| e(i, 3)).collect();
        let batch: Vec<(&[f64], LocationId)> =
            keys.iter().enumerate().map(|(i, k)| (k.as_slice(), LocationId(i as u32))).collect();
        q.enqueue(&batch).unwrap();
        assert_eq!(q.len(), 4);
        assert_eq!(q.locations(), (0..4).map(LocationId).collect::<Vec<_>>());
    }

    #[test]
    fn full_queue_evicts_oldest() {
        let mut q = KeyQueue::new(8, 2).unwrap();
        let k = e(0, 2);
        for round in 0..3u32 {
            let batch: Vec<(&[f64], LocationId)> =
                (0..4).map(|i| (k.as_slice(), LocationId(round * 4 + i))).collect();
            q.enqueue(&batch).unwrap();
        }
        assert_eq!(q.locations(), (4..12).map(LocationId).collect::<Vec<_>>());
    }

    #[test]
    fn oversized_batch_and_non_unit_rejected() {
        let mut q = KeyQueue::new(2, 2).unwrap();
        let k = e(0, 2);
        let batch = vec![(k.as_slice(), LocationId(0)); 3];
        assert!(matches!(q.enqueue(&batch), Err(Error::Config { .. })));
        let bad = [0.5, 0.5];
        assert!(matches!(
            q.enqueue(&[(&bad[..], LocationId(0))]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn mask_drops_same_location() {
        let mut q = KeyQueue::new(4, 2).unwrap();
        let k = e(0, 2);
        q.enqueue(&[(&k[..], LocationId(1)), (&k[..], LocationId(2))]).unwrap();
        assert_eq!(
            q.keep_mask(&[LocationId(1), LocationId(3)], true),
            vec![false, true, true, true]
        );
        assert!(q.keep_mask(&[LocationId(1)], false).iter().all(|&k| k));
    }
}
