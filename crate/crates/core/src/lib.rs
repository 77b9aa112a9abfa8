//! Multichannel Conv-TasNet speech enhancement on a small `f64` autodiff core.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`]: dense tensors, differentiable primitives and gradient checks
//! - [`frontend`]: framing, learned encoder/decoder, masking, overlap-add
//! - [`tcn`]: the temporal convolutional mask-estimation stacks
//! - [`model`]: variant configuration, construction, forward pass, checkpoints
//! - [`analysis`]: parameter counting, receptive fields, model summaries
//! - [`checks`]: the finite-difference gradient check registry
//! - [`train`]: SDR, Adam, the training loop and a synthetic data generator

pub mod analysis;
pub mod checks;
pub mod audio;
pub mod error;
pub mod frontend;
pub mod init;
pub mod layers;
pub mod model;
pub mod tcn;
pub mod tensor;
pub mod train;

pub use audio::AudioBuffer;
pub use error::{Error, Result};
pub use model::{Model, ModelConfig, Variant};
pub use tensor::{Parameter, Tensor};
