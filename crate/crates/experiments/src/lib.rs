//! Reproducible runs: data preparation, synthetic data, GAN and segmenter
//! training, evaluation against the baselines, and sample grids.

pub mod config;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod grid;
pub mod prepare;
pub mod segment;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
