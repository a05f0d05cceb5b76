//! Image I/O, bicubic resampling, fidelity metrics, synthetic data.

mod io;
mod metrics;
mod resize;
mod synth;

pub use io::{load_image, save_image};
pub use metrics::{psnr, ssim, PSNR_CAP_DB};
pub use resize::bicubic_resize;
pub use synth::{gen_synthetic_dataset, DatasetManifest, PatchRecipe, RecipeFamily};

use crate::error::{DifaugError, Result};
use crate::tensor::Tensor;

/// RGB image, planar [3,H,W] row-major, values in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    /// channel-major: all of R, then G, then B
    pixels: Vec<f64>,
}

impl Image {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(DifaugError::Shape("image dimensions must be positive".into()));
        }
        if pixels.len() != 3 * height * width {
            return Err(DifaugError::Shape(format!(
                "expected {} pixel values for 3x{height}x{width}, got {}",
                3 * height * width,
                pixels.len()
            )));
        }
        Ok(Image { height, width, pixels })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Image { height, width, pixels: vec![0.0; 3 * height * width] }
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        Image { height, width, pixels: vec![value; 3 * height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.pixels[c * self.height * self.width..(c + 1) * self.height * self.width]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.pixels[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.pixels[(c * self.height + y) * self.width + x] = v;
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.pixels {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Axis-aligned crop; caller must stay in bounds.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Image> {
        if y0 + h > self.height || x0 + w > self.width {
            return Err(DifaugError::Shape(format!(
                "crop {h}x{w}@({y0},{x0}) outside {}x{}",
                self.height, self.width
            )));
        }
        let mut out = Image::zeros(h, w);
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    out.set(c, y, x, self.get(c, y0 + y, x0 + x));
                }
            }
        }
        Ok(out)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(vec![3, self.height, self.width], self.pixels.clone())
            .expect("image invariant")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Image> {
        if t.shape().len() != 3 || t.shape()[0] != 3 {
            return Err(DifaugError::Shape(format!(
                "expected [3,H,W] tensor, got {:?}",
                t.shape()
            )));
        }
        Image::new(t.shape()[1], t.shape()[2], t.data().to_vec())
    }
}

/// HR patch with its bicubic-degraded LR counterpart.
#[derive(Debug, Clone)]
pub struct ImagePair {
    pub hr: Image,
    pub lr: Image,
    pub scale: usize,
}

impl ImagePair {
    pub fn from_hr(hr: Image, scale: usize) -> Result<ImagePair> {
        if hr.height() % scale != 0 || hr.width() % scale != 0 {
            return Err(DifaugError::Shape(format!(
                "HR {}x{} not divisible by scale {scale}",
                hr.height(),
                hr.width()
            )));
        }
        let lr = bicubic_resize(&hr, hr.height() / scale, hr.width() / scale)?;
        Ok(ImagePair { hr, lr, scale })
    }
}
