//! Synthetic-sample augmentation for respiratory sound classification.
//!
//! The crate trains a mel-conditioned diffusion vocoder, uses it to top up
//! minority classes into Mixed-N datasets, and trains a spectrogram
//! classifier whose features are made indistinguishable between real and
//! synthetic samples by a gradient-reversed discriminator.

// `!(x > 0.0)` is how argument checks reject NaN along with bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autograd;
pub mod checkpoint;
pub mod classifier;
pub mod corpus;
pub mod diffusion;
pub mod dsp;
pub mod error;
pub mod fsutil;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod parallel;
pub mod tensor;
pub mod toy;
pub mod vocoder;

#[cfg(test)]
mod testutil;

pub use autograd::{Gradients, Var};
pub use error::{Error, Result};
pub use parallel::Exec;
pub use tensor::{Real, Tensor};
