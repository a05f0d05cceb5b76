//! Separable bicubic (Catmull-Rom, a = -0.5) resampling with antialiasing
//! on downscale. Edge handling by clamping source coordinates; each output
//! coordinate's weights are normalized to sum to 1.

use crate::error::{DifaugError, Result};

use super::Image;

const A: f64 = -0.5;

/// Catmull-Rom cubic kernel, support [-2, 2].
pub fn cubic_kernel(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        (A + 2.0) * x * x * x - (A + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        A * x * x * x - 5.0 * A * x * x + 8.0 * A * x - 4.0 * A
    } else {
        0.0
    }
}

/// Precomputed taps for one output coordinate: clamped source indices and
/// normalized weights.
struct Taps {
    indices: Vec<usize>,
    weights: Vec<f64>,
}

fn axis_taps(in_len: usize, out_len: usize) -> Vec<Taps> {
    let scale = in_len as f64 / out_len as f64;
    // widen the kernel when downscaling so it acts as an antialias filter
    let filter_scale = scale.max(1.0);
    let support = 2.0 * filter_scale;
    (0..out_len)
        .map(|o| {
            let center = (o as f64 + 0.5) * scale - 0.5;
            let lo = (center - support).ceil() as i64;
            let hi = (center + support).floor() as i64;
            let mut indices = Vec::with_capacity((hi - lo + 1) as usize);
            let mut weights = Vec::with_capacity((hi - lo + 1) as usize);
            let mut sum = 0.0;
            for i in lo..=hi {
                let w = cubic_kernel((i as f64 - center) / filter_scale);
                if w == 0.0 {
                    continue;
                }
                indices.push(i.clamp(0, in_len as i64 - 1) as usize);
                weights.push(w);
                sum += w;
            }
            for w in &mut weights {
                *w /= sum;
            }
            Taps { indices, weights }
        })
        .collect()
}

fn resize_plane(src: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    // horizontal pass
    let xt = axis_taps(w, ow);
    let mut mid = vec![0.0; h * ow];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for (ox, taps) in xt.iter().enumerate() {
            let mut acc = 0.0;
            for (i, wt) in taps.indices.iter().zip(&taps.weights) {
                acc += row[*i] * wt;
            }
            mid[y * ow + ox] = acc;
        }
    }
    // vertical pass
    let yt = axis_taps(h, oh);
    let mut out = vec![0.0; oh * ow];
    for (oy, taps) in yt.iter().enumerate() {
        for ox in 0..ow {
            let mut acc = 0.0;
            for (i, wt) in taps.indices.iter().zip(&taps.weights) {
                acc += mid[*i * ow + ox] * wt;
            }
            out[oy * ow + ox] = acc;
        }
    }
    out
}

/// Bicubic resize; output clamped to [0,1].
pub fn bicubic_resize(img: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    if out_h == 0 || out_w == 0 {
        return Err(DifaugError::InvalidArgument(
            "bicubic_resize: output dimensions must be positive".into(),
        ));
    }
    let (h, w) = (img.height(), img.width());
    let mut pixels = Vec::with_capacity(3 * out_h * out_w);
    for c in 0..Image::CHANNELS {
        pixels.extend(resize_plane(img.channel(c), h, w, out_h, out_w));
    }
    let mut out = Image::new(out_h, out_w, pixels)?;
    out.clamp_unit();
    Ok(out)
}
