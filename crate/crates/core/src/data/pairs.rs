use rand::Rng;
use serde::{Deserialize, Serialize};

use super::augment::{augment, AugmentationPolicy};
use super::sample::{Image, LocationId, UnlabeledDataset};

/// How positive pairs are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    /// Two augmentations of the same image.
    Moco,
    /// The key view comes from another timestamp at the same location.
    Mocotp,
}

#[derive(Debug, Clone)]
pub struct PositivePair {
    pub query: Image,
    pub key: Image,
    pub location: LocationId,
    pub query_source: usize,
    pub key_source: usize,
}

/// Index of the image the key view is drawn from.
///
/// In `Mocotp` mode this is uniform over samples at the anchor's location
/// whose timestamp differs from the anchor's; locations with a single
/// timestamp fall back to the anchor itself.
pub fn key_source(dataset: &UnlabeledDataset, anchor: usize, mode: PairMode, rng: &mut impl Rng) -> usize {
    match mode {
        PairMode::Moco => anchor,
        PairMode::Mocotp => {
            let ts = dataset.timestamp(anchor);
            let others: Vec<usize> = dataset
                .views_at(dataset.location(anchor))
                .iter()
                .copied()
                .filter(|&i| dataset.timestamp(i) != ts)
                .collect();
            if others.is_empty() {
                anchor
            } else {
                others[rng.random_range(0..others.len())]
            }
        }
    }
}

pub fn sample_pair(
    dataset: &UnlabeledDataset,
    anchor: usize,
    mode: PairMode,
    policy: &AugmentationPolicy,
    rng: &mut impl Rng,
) -> PositivePair {
    let source = key_source(dataset, anchor, mode, rng);
    let query = augment(dataset.image(anchor), policy, rng);
    let key = augment(dataset.image(source), policy, rng);
    PositivePair {
        query,
        key,
        location: dataset.location(anchor),
        query_source: anchor,
        key_source: source,
    }
}
