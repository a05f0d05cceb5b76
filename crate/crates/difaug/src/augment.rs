//! Diffusion-style corruption of discriminator inputs.
//!
//! Two modes: plain scaled Gaussian noise, and the variant whose injected
//! noise is centered on the bicubic-upsampled LR image. Outputs are not
//! clamped to [0,1]; clamping would bias the moments the tests verify.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DifaugError, Result};
use crate::imaging::{bicubic_resize, Image};
use crate::rng::derive_rng;
use crate::schedule::{sample_step, NoiseSchedule, TSamplingPolicy};
use crate::tensor::Tensor;

pub const DEFAULT_ETA: f64 = 0.05;
pub const LR_SCALE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMode {
    /// η-scaled zero-mean Gaussian noise.
    GaussianOnly,
    /// Noise centered on the bicubic-upsampled LR image.
    LrMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub schedule: NoiseSchedule,
    pub eta: f64,
    pub mode: AugmentMode,
    pub share_t_across_batch: bool,
    pub policy: TSamplingPolicy,
}

impl AugmentConfig {
    pub fn new(schedule: NoiseSchedule, eta: f64, mode: AugmentMode) -> Result<Self> {
        if eta < 0.0 {
            return Err(DifaugError::InvalidArgument(format!("eta must be >= 0, got {eta}")));
        }
        Ok(AugmentConfig {
            schedule,
            eta,
            mode,
            share_t_across_batch: true,
            policy: TSamplingPolicy::full_range(&schedule),
        })
    }
}

#[derive(Debug, Clone)]
pub struct AugmentedSample {
    pub corrupted: Tensor,
    pub step: usize,
    pub noise_seed: u64,
}

fn check_image_tensor(x: &Tensor) -> Result<(usize, usize)> {
    if x.shape().len() != 3 || x.shape()[0] != 3 {
        return Err(DifaugError::Shape(format!(
            "augment expects [3,H,W], got {:?}",
            x.shape()
        )));
    }
    Ok((x.shape()[1], x.shape()[2]))
}

/// Bicubic ×4 upsample of an LR tensor, as a tensor.
pub fn upsample_lr(x_lr: &Tensor) -> Result<Tensor> {
    let (h, w) = check_image_tensor(x_lr)?;
    let img = Image::from_tensor(x_lr)?;
    Ok(bicubic_resize(&img, h * LR_SCALE, w * LR_SCALE)?.to_tensor())
}

/// Shared corruption core: α_t·x + sqrt(1−α_t²)·(η·ε + shift).
/// `noise` is the raw ε buffer, exposed so tests can force ε = 0.
pub fn diffuse_with_noise(
    x: &Tensor,
    shift: Option<&Tensor>,
    step: usize,
    cfg: &AugmentConfig,
    noise: &[f64],
) -> Result<Tensor> {
    check_image_tensor(x)?;
    if noise.len() != x.numel() {
        return Err(DifaugError::Shape(format!(
            "noise length {} does not match tensor {}",
            noise.len(),
            x.numel()
        )));
    }
    if let Some(s) = shift {
        if s.shape() != x.shape() {
            return Err(DifaugError::Shape(format!(
                "shift shape {:?} vs input {:?}",
                s.shape(),
                x.shape()
            )));
        }
    }
    let alpha = cfg.schedule.alpha(step)?;
    let coeff = (1.0 - alpha * alpha).sqrt();
    let data: Vec<f64> = (0..x.numel())
        .map(|i| {
            let shifted = cfg.eta * noise[i] + shift.map_or(0.0, |s| s.data()[i]);
            alpha * x.data()[i] + coeff * shifted
        })
        .collect();
    Tensor::from_vec(x.shape().to_vec(), data)
}

fn gaussian_noise(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Standard diffusion corruption (zero-centered noise).
pub fn diffuse_standard(
    x: &Tensor,
    step: usize,
    cfg: &AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<AugmentedSample> {
    let noise = gaussian_noise(x.numel(), rng);
    Ok(AugmentedSample {
        corrupted: diffuse_with_noise(x, None, step, cfg, &noise)?,
        step,
        noise_seed: 0,
    })
}

/// LR-mean corruption: noise centered on the upsampled LR image.
pub fn diffuse_lr_mean(
    x: &Tensor,
    x_lr: &Tensor,
    step: usize,
    cfg: &AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<AugmentedSample> {
    let (h, w) = check_image_tensor(x)?;
    let (lh, lw) = check_image_tensor(x_lr)?;
    if lh * LR_SCALE != h || lw * LR_SCALE != w {
        return Err(DifaugError::Shape(format!(
            "LR {lh}x{lw} is not HR {h}x{w} divided by {LR_SCALE}"
        )));
    }
    let up = upsample_lr(x_lr)?;
    let noise = gaussian_noise(x.numel(), rng);
    Ok(AugmentedSample {
        corrupted: diffuse_with_noise(x, Some(&up), step, cfg, &noise)?,
        step,
        noise_seed: 0,
    })
}

/// Corrupt a batch. One step is drawn for the whole batch when
/// `share_t_across_batch`, else one per item. Per-item noise streams are
/// derived from sub-seeds drawn up front, so items can be processed in
/// parallel without the worker count affecting the result.
pub fn augment_batch(
    batch: &[(Tensor, Option<Tensor>)],
    cfg: &AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<AugmentedSample>> {
    if batch.is_empty() {
        return Err(DifaugError::InvalidArgument("augment_batch: empty batch".into()));
    }
    let steps: Vec<usize> = if cfg.share_t_across_batch {
        let s = sample_step(&cfg.schedule, cfg.policy, rng)?;
        vec![s; batch.len()]
    } else {
        (0..batch.len())
            .map(|_| sample_step(&cfg.schedule, cfg.policy, rng))
            .collect::<Result<_>>()?
    };
    let sub_seeds: Vec<u64> = (0..batch.len()).map(|_| rng.gen()).collect();
    batch
        .par_iter()
        .zip(&steps)
        .zip(&sub_seeds)
        .map(|(((x, x_lr), &step), &seed)| {
            let mut item_rng = derive_rng(seed, "augment-item", &[]);
            let mut sample = match (cfg.mode, x_lr) {
                (AugmentMode::GaussianOnly, _) => diffuse_standard(x, step, cfg, &mut item_rng)?,
                (AugmentMode::LrMean, Some(lr)) => {
                    diffuse_lr_mean(x, lr, step, cfg, &mut item_rng)?
                }
                (AugmentMode::LrMean, None) => {
                    return Err(DifaugError::InvalidArgument(
                        "LR-mean mode requires an LR tensor per batch item".into(),
                    ))
                }
            };
            sample.noise_seed = seed;
            Ok(sample)
        })
        .collect()
}
