//! Unsupervised image-to-image translation with a conditional GAN.
//!
//! Training runs in two steps. Step 1 trains an auxiliary-classifier GAN over
//! all domains so that one latent code `z ~ U(-1, 1)` carries the structure
//! shared across domains while the label selects the domain. Step 2 freezes
//! the generator and trains an encoder to recover `z` from generated images.
//! Translation then encodes an image and regenerates it under another label.

pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod model;
pub mod nn;
pub mod objectives;
pub mod tensor;
pub mod trainer;

pub use config::{LabelMode, RunConfig};
pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
