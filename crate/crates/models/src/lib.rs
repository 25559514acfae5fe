//! Trainable models on candle: the conditioned pix2pixHD-style generator,
//! multi-scale patch discriminator, GAN losses, Adam, checkpoints, the
//! perceptual metric backbone and the U-Net flood segmenter.

pub mod checkpoint;
pub mod convert;
pub mod discriminator;
pub mod error;
pub mod generator;
pub mod layers;
pub mod losses;
pub mod lpips;
pub mod optim;
pub mod params;
pub mod segmenter;

pub use error::{Error, Result};
