//! Vision-transformer and CNN image classifiers built on a small reverse-mode
//! autograd engine, together with the data pipeline, transfer-learning
//! workflow and benchmark harness used to compare them.

pub mod autograd;
pub mod data;
pub mod error;
pub mod models;
pub mod nn;
pub mod tensor;
pub mod train;

pub mod cli;

pub use error::{Error, Result};
pub use tensor::Tensor;
