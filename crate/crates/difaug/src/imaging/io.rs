//! 8-bit RGB file I/O: PNG and binary PPM (P6).

use std::path::Path;

use crate::error::{DifaugError, Result};

use super::Image;

fn to_bytes(img: &Image) -> Vec<u8> {
    let (h, w) = (img.height(), img.width());
    let mut out = Vec::with_capacity(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = img.get(c, y, x).clamp(0.0, 1.0);
                out.push((v * 255.0).round() as u8);
            }
        }
    }
    out
}

fn from_bytes(h: usize, w: usize, interleaved: &[u8]) -> Image {
    let mut img = Image::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = interleaved[(y * w + x) * 3 + c] as f64 / 255.0;
                img.set(c, y, x, v);
            }
        }
    }
    img
}

/// Save as PNG or PPM depending on the file extension.
pub fn save_image(img: &Image, path: &Path) -> Result<()> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext.to_ascii_lowercase().as_str() {
        "png" => {
            let buf = to_bytes(img);
            image::save_buffer(
                path,
                &buf,
                img.width() as u32,
                img.height() as u32,
                image::ColorType::Rgb8,
            )
            .map_err(|e| DifaugError::Other(format!("png encode {}: {e}", path.display())))
        }
        "ppm" => {
            let mut data = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
            data.extend(to_bytes(img));
            std::fs::write(path, data).map_err(|e| DifaugError::io(path.display().to_string(), e))
        }
        other => Err(DifaugError::InvalidArgument(format!(
            "unsupported image extension {other:?} (use .png or .ppm)"
        ))),
    }
}

pub fn load_image(path: &Path) -> Result<Image> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext.to_ascii_lowercase().as_str() {
        "png" => {
            let dyn_img = image::open(path)
                .map_err(|e| DifaugError::Other(format!("png decode {}: {e}", path.display())))?;
            let rgb = dyn_img.to_rgb8();
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            Ok(from_bytes(h, w, rgb.as_raw()))
        }
        "ppm" => {
            let bytes =
                std::fs::read(path).map_err(|e| DifaugError::io(path.display().to_string(), e))?;
            parse_ppm(&bytes)
        }
        other => Err(DifaugError::InvalidArgument(format!(
            "unsupported image extension {other:?} (use .png or .ppm)"
        ))),
    }
}

/// Binary PPM (P6) parser; errors carry the byte offset of the problem.
pub fn parse_ppm(bytes: &[u8]) -> Result<Image> {
    fn skip_ws(bytes: &[u8], pos: &mut usize) {
        while *pos < bytes.len() {
            match bytes[*pos] {
                b' ' | b'\t' | b'\r' | b'\n' => *pos += 1,
                b'#' => {
                    while *pos < bytes.len() && bytes[*pos] != b'\n' {
                        *pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn read_int(bytes: &[u8], pos: &mut usize) -> Result<usize> {
        skip_ws(bytes, pos);
        let start = *pos;
        while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
            *pos += 1;
        }
        if *pos == start {
            return Err(DifaugError::Parse {
                offset: start,
                detail: "expected integer".into(),
            });
        }
        std::str::from_utf8(&bytes[start..*pos])
            .unwrap()
            .parse()
            .map_err(|e| DifaugError::Parse { offset: start, detail: format!("{e}") })
    }

    if bytes.len() < 2 || &bytes[0..2] != b"P6" {
        return Err(DifaugError::Parse { offset: 0, detail: "missing P6 magic".into() });
    }
    let mut pos = 2usize;
    let w = read_int(bytes, &mut pos)?;
    let h = read_int(bytes, &mut pos)?;
    let maxval = read_int(bytes, &mut pos)?;
    if maxval != 255 {
        return Err(DifaugError::Parse {
            offset: pos,
            detail: format!("only maxval 255 supported, got {maxval}"),
        });
    }
    if w == 0 || h == 0 {
        return Err(DifaugError::Parse { offset: pos, detail: "zero image dimension".into() });
    }
    // exactly one whitespace byte separates header and payload
    if pos >= bytes.len() {
        return Err(DifaugError::Parse { offset: pos, detail: "truncated header".into() });
    }
    pos += 1;
    let need = 3 * w * h;
    if bytes.len() < pos + need {
        return Err(DifaugError::Parse {
            offset: bytes.len(),
            detail: format!("truncated payload: need {need} bytes from offset {pos}"),
        });
    }
    Ok(from_bytes(h, w, &bytes[pos..pos + need]))
}
