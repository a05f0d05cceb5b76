//! Desk-scale laboratory for GAN-based single-image super-resolution with
//! diffusion-style discriminator augmentation and calibration measurement.

pub mod augment;
pub mod calib;
pub mod config;
pub mod error;
pub mod imaging;
pub mod models;
pub mod rng;
pub mod schedule;
pub mod tensor;
pub mod train;

pub use error::{DifaugError, Result};
