//! Online mutual knowledge distillation between co-trained convolutional
//! classifiers, with logit-level (temperature-softened KL) and
//! feature-map-level (adversarial discriminator) transfer.

pub mod analysis;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod losses;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, FormatKind, Result};
pub use tensor::{Element, Param, Tape, Tensor};
