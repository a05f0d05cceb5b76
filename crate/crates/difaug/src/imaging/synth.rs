//! Procedural synthetic HR/LR dataset generation.
//!
//! Every patch is fully described by a recipe recorded in the manifest, so a
//! dataset can be regenerated bit-identically from the manifest alone.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DifaugError, Result};
use crate::rng::derive_rng;

use super::{Image, ImagePair};

pub const SCALE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecipeFamily {
    Grating,
    Checkerboard,
    RadialGradient,
    FilteredNoise,
    PolygonEdges,
}

/// Parameters of one generated patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRecipe {
    pub family: RecipeFamily,
    /// Sub-seed for any residual randomness inside the family.
    pub sub_seed: u64,
    /// Cycles across the patch (gratings) or cell size (checkerboards).
    pub frequency: f64,
    pub angle: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub patch_size: usize,
    pub count: usize,
    pub recipes: Vec<PatchRecipe>,
}

impl DatasetManifest {
    /// Draw `count` recipes deterministically from the seed.
    pub fn generate(seed: u64, patch_size: usize, count: usize) -> Result<Self> {
        if patch_size % SCALE != 0 {
            return Err(DifaugError::InvalidArgument(format!(
                "patch_size {patch_size} must be divisible by {SCALE}"
            )));
        }
        if count == 0 {
            return Err(DifaugError::InvalidArgument("count must be positive".into()));
        }
        let recipes = (0..count as u64)
            .map(|i| {
                let mut rng = derive_rng(seed, "recipe", &[i]);
                let family = match rng.gen_range(0..5u8) {
                    0 => RecipeFamily::Grating,
                    1 => RecipeFamily::Checkerboard,
                    2 => RecipeFamily::RadialGradient,
                    3 => RecipeFamily::FilteredNoise,
                    _ => RecipeFamily::PolygonEdges,
                };
                PatchRecipe {
                    family,
                    sub_seed: rng.gen(),
                    frequency: rng.gen_range(1.0..8.0),
                    angle: rng.gen_range(0.0..std::f64::consts::PI),
                    phase: rng.gen_range(0.0..std::f64::consts::TAU),
                }
            })
            .collect();
        Ok(DatasetManifest { seed, patch_size, count, recipes })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| DifaugError::Other(format!("manifest encode: {e}")))?;
        std::fs::write(path, json).map_err(|e| DifaugError::io(path.display().to_string(), e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DifaugError::io(path.display().to_string(), e))?;
        serde_json::from_str(&text)
            .map_err(|e| DifaugError::Config(format!("manifest {}: {e}", path.display())))
    }
}

/// Render one patch from its recipe.
pub fn render_patch(recipe: &PatchRecipe, size: usize) -> Image {
    match recipe.family {
        RecipeFamily::Grating => grating(recipe, size),
        RecipeFamily::Checkerboard => checkerboard(recipe, size),
        RecipeFamily::RadialGradient => radial_gradient(recipe, size),
        RecipeFamily::FilteredNoise => filtered_noise(recipe, size),
        RecipeFamily::PolygonEdges => polygon_edges(recipe, size),
    }
}

/// Generate the full dataset described by a manifest.
pub fn gen_synthetic_dataset(manifest: &DatasetManifest) -> Result<Vec<ImagePair>> {
    manifest
        .recipes
        .par_iter()
        .map(|r| ImagePair::from_hr(render_patch(r, manifest.patch_size), SCALE))
        .collect()
}

fn grating(recipe: &PatchRecipe, size: usize) -> Image {
    let mut img = Image::zeros(size, size);
    let (s, c) = recipe.angle.sin_cos();
    let f = recipe.frequency;
    for ch in 0..3 {
        // small per-channel phase offset so the patch is not grayscale
        let phase = recipe.phase + ch as f64 * 0.7;
        for y in 0..size {
            for x in 0..size {
                let u = (x as f64 * c + y as f64 * s) / size as f64;
                let v = 0.5 + 0.45 * (std::f64::consts::TAU * f * u + phase).sin();
                img.set(ch, y, x, v);
            }
        }
    }
    img
}

fn checkerboard(recipe: &PatchRecipe, size: usize) -> Image {
    let mut rng = derive_rng(recipe.sub_seed, "checker", &[]);
    let cell = 1 + (recipe.frequency as usize).min(size / 2);
    let color_a: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
    let color_b: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
    let mut img = Image::zeros(size, size);
    for y in 0..size {
        for x in 0..size {
            let parity = ((y / cell) + (x / cell)) % 2;
            let col = if parity == 0 { color_a } else { color_b };
            for ch in 0..3 {
                img.set(ch, y, x, col[ch]);
            }
        }
    }
    img
}

fn radial_gradient(recipe: &PatchRecipe, size: usize) -> Image {
    let mut rng = derive_rng(recipe.sub_seed, "radial", &[]);
    let cx = rng.gen_range(0.0..size as f64);
    let cy = rng.gen_range(0.0..size as f64);
    let inner: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
    let outer: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
    let max_r = (size as f64) * std::f64::consts::SQRT_2;
    let mut img = Image::zeros(size, size);
    for y in 0..size {
        for x in 0..size {
            let r = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt() / max_r;
            for ch in 0..3 {
                img.set(ch, y, x, inner[ch] * (1.0 - r) + outer[ch] * r);
            }
        }
    }
    img
}

fn filtered_noise(recipe: &PatchRecipe, size: usize) -> Image {
    let mut rng = derive_rng(recipe.sub_seed, "noise", &[]);
    let mut img = Image::new(size, size, (0..3 * size * size).map(|_| rng.gen()).collect())
        .expect("size checked");
    // a few 3x3 box blur passes; range [0,1] is preserved
    let passes = 1 + (recipe.frequency as usize) % 3;
    for _ in 0..passes {
        let src = img.clone();
        for ch in 0..3 {
            for y in 0..size {
                for x in 0..size {
                    let mut acc = 0.0;
                    let mut n = 0.0;
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            let yy = y as i64 + dy;
                            let xx = x as i64 + dx;
                            if yy >= 0 && yy < size as i64 && xx >= 0 && xx < size as i64 {
                                acc += src.get(ch, yy as usize, xx as usize);
                                n += 1.0;
                            }
                        }
                    }
                    img.set(ch, y, x, acc / n);
                }
            }
        }
    }
    img
}

fn polygon_edges(recipe: &PatchRecipe, size: usize) -> Image {
    let mut rng = derive_rng(recipe.sub_seed, "poly", &[]);
    let base: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
    let mut img = Image::zeros(size, size);
    for y in 0..size {
        for x in 0..size {
            for ch in 0..3 {
                img.set(ch, y, x, base[ch]);
            }
        }
    }
    // stack random half-plane color shifts; sharp edges survive degradation
    let edges = 3 + (recipe.frequency as usize) % 4;
    for _ in 0..edges {
        let px = rng.gen_range(0.0..size as f64);
        let py = rng.gen_range(0.0..size as f64);
        let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let (ns, nc) = theta.sin_cos();
        let delta: [f64; 3] = [
            rng.gen_range(-0.4..0.4),
            rng.gen_range(-0.4..0.4),
            rng.gen_range(-0.4..0.4),
        ];
        for y in 0..size {
            for x in 0..size {
                let d = (x as f64 - px) * nc + (y as f64 - py) * ns;
                if d > 0.0 {
                    for ch in 0..3 {
                        let v = (img.get(ch, y, x) + delta[ch]).clamp(0.0, 1.0);
                        img.set(ch, y, x, v);
                    }
                }
            }
        }
    }
    img
}
