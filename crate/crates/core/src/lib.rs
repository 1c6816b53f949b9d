//! License-plate sequence recognition at desk scale: synthetic plates,
//! unpaired image translation, convolutional-recurrent recognizers trained
//! with CTC, evaluation metrics and a convolution cost model.

pub mod ctc;
pub mod error;
pub mod gan;
pub mod layers;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Rng, Tensor};
