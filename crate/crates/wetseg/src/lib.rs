//! Wetland land-cover toolkit: raster preprocessing into training patches,
//! convolutional-autoencoder pretraining, U-Net segmentation with encoder
//! weight transfer, a full metric suite, and high-to-medium-resolution label
//! downscaling.

pub mod cli;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod losses;
pub mod nnmodels;
pub mod pipeline;
pub mod synth;
pub mod transfer;
pub mod train;

pub use error::{ErrorCategory, Result, WetsegError};
