//! Core building blocks for physics-conditioned satellite image synthesis:
//! rasters and their interchange formats, triplet manifests, mask
//! transforms and augmentation, flat-color baselines, and the IoU /
//! perceptual / FVPS evaluation stack.

pub mod augment;
pub mod baselines;
pub mod error;
pub mod io;
pub mod manifest;
pub mod masks;
pub mod metrics;
pub mod polygon;
pub mod raster;
pub mod report;

pub use error::{Error, Result};
pub use raster::{BinaryMask, Event, ImageTile, MaskSemantics};
