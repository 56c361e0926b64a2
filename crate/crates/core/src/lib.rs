//! Attentional adversarial attack generator for face-embedding networks.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod models;
pub mod nn_core;
pub mod optim;
pub mod training;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
