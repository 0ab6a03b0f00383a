//! Contrastive self-supervised pretraining (MoCo and MoCo with temporal
//! positives) and a label-efficiency evaluation harness, built on a small
//! double-precision autodiff engine.

pub mod error;
pub mod nn;

pub use error::{Error, Result};
pub mod data;
pub mod seed;
pub mod artifact;
pub mod contrastive;
pub mod eval;
pub mod bench;
