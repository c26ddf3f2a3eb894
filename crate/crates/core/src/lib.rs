//! From-scratch VGG-style convolutional classifier for building-defect
//! images, with layer freezing for transfer learning and class activation
//! maps for localisation.

pub mod cam;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod weights_io;

#[cfg(any(test, feature = "oracle"))]
pub mod oracle;

pub use error::{Error, Result};
pub use model::{ArchSpec, BlockSpec, HeadSpec, Model, ParamMap, TrainRule, LABELS};
pub use tensor::Tensor;
