//! Dense tensors, reverse-mode differentiation, layers, optimizer and
//! learning-rate schedules.

pub mod checkpoint;
pub mod functional;
pub mod graph;
pub mod model;
pub mod optim;
pub mod params;
pub mod schedule;
pub mod tensor;

pub use graph::{BoundParams, Gradients, Graph, Var};
pub use model::{argmax_rows, Activation, Encoder, EncoderConfig, ImageShape, InputNorm, LinearHead, Output, StemConfig};
pub use optim::{sgd_step, SgdConfig};
pub use params::ParamSet;
pub use schedule::LrSchedule;
pub use tensor::Tensor;
