//! Samples and datasets, synthetic scene generation, folder ingestion,
//! augmentations and positive-pair sampling.

pub mod augment;
pub mod folder;
pub mod pairs;
pub mod sample;
pub mod synthetic;

pub use augment::{augment, AugmentationPolicy, ColorJitter};
pub use folder::{export_folder, load_folder};
pub use pairs::{sample_pair, PairMode, PositivePair};
pub use sample::{stack_images, Dataset, Image, LocationId, Sample, UnlabeledDataset};
pub use synthetic::{generate_synthetic, SyntheticSpec};
