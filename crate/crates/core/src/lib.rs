//! A small CPU deep-learning engine (tensors, conv/deconv/fully connected
//! layers with batch norm, Adam) and the class-experts GAN experiment
//! harness built on it.

pub mod container;
pub mod data;
pub mod error;
pub mod experts;
pub mod gan;
pub mod harness;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{concat_channels, matmul, Real, Rng, Shape, Tensor};
