use std::path::Path;

use image::RgbImage;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Side length every image is resized to before entering the network.
pub const INPUT_SIDE: usize = 256;

/// Outcome of the noise-removal filter.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Validation {
    Accept,
    Reject(RejectReason),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RejectReason {
    DecodeFailure(String),
    ZeroVariance,
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RejectReason::DecodeFailure(why) => write!(f, "decode failure: {why}"),
            RejectReason::ZeroVariance => f.write_str("zero variance (blank image)"),
        }
    }
}

/// Decode PNG or JPEG bytes to 8-bit RGB.
pub fn decode_rgb(bytes: &[u8], what: &str) -> Result<RgbImage> {
    image::load_from_memory(bytes)
        .map(|img| img.to_rgb8())
        .map_err(|e| Error::Decode {
            what: what.to_string(),
            reason: e.to_string(),
        })
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_rgb(&bytes, &path.display().to_string())
}

/// `[H, W, 3]` tensor with raw 0..255 values.
pub fn rgb_to_tensor(img: &RgbImage) -> Tensor {
    let (w, h) = img.dimensions();
    Tensor::new(
        vec![h as usize, w as usize, 3],
        img.as_raw().iter().map(|&v| v as f32).collect(),
    )
    .expect("decoded images are non-empty")
}

/// Decode and bilinearly resize to `[side, side, 3]`; values stay in 0..255.
pub fn decode_resize(path: &Path, side: usize) -> Result<Tensor> {
    let img = read_rgb(path)?;
    resize_bilinear(&rgb_to_tensor(&img), side, side)
}

pub fn decode_resize_bytes(bytes: &[u8], side: usize) -> Result<Tensor> {
    let img = decode_rgb(bytes, "image data")?;
    resize_bilinear(&rgb_to_tensor(&img), side, side)
}

/// Bilinear sample at fractional `(y, x)`; coordinates outside the image
/// are clamped, so borders extend outward.
pub(crate) fn sample_bilinear(
    src: &[f32],
    h: usize,
    w: usize,
    c: usize,
    y: f64,
    x: f64,
    out: &mut [f32],
) {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = ((y - y0 as f64) as f32, (x - x0 as f64) as f32);
    let p00 = &src[(y0 * w + x0) * c..][..c];
    let p01 = &src[(y0 * w + x1) * c..][..c];
    let p10 = &src[(y1 * w + x0) * c..][..c];
    let p11 = &src[(y1 * w + x1) * c..][..c];
    for ch in 0..c {
        let top = p00[ch] * (1.0 - fx) + p01[ch] * fx;
        let bottom = p10[ch] * (1.0 - fx) + p11[ch] * fx;
        out[ch] = top * (1.0 - fy) + bottom * fy;
    }
}

/// Resize `[H, W, C]` with half-pixel-centre bilinear interpolation.
/// Equal sizes pass through unchanged.
pub fn resize_bilinear(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (h, w, c) = img.dims3("image")?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::arg("resize target must be non-empty"));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(img.clone());
    }
    let (sy, sx) = (h as f64 / out_h as f64, w as f64 / out_w as f64);
    let mut out = vec![0f32; out_h * out_w * c];
    for oy in 0..out_h {
        let y = (oy as f64 + 0.5) * sy - 0.5;
        for ox in 0..out_w {
            let x = (ox as f64 + 0.5) * sx - 0.5;
            let dst = &mut out[(oy * out_w + ox) * c..][..c];
            sample_bilinear(img.data(), h, w, c, y, x, dst);
        }
    }
    Tensor::new(vec![out_h, out_w, c], out)
}

/// Scale 0..255 pixel values into [0, 1].
pub fn normalize(img: &Tensor) -> Tensor {
    img.map(|v| v / 255.0)
}

/// Noise-removal filter: reject undecodable files and blank images.
pub fn validate_image(path: &Path) -> Validation {
    match std::fs::read(path) {
        Ok(bytes) => validate_image_bytes(&bytes),
        Err(e) => Validation::Reject(RejectReason::DecodeFailure(e.to_string())),
    }
}

pub fn validate_image_bytes(bytes: &[u8]) -> Validation {
    match decode_rgb(bytes, "image") {
        Err(Error::Decode { reason, .. }) => {
            Validation::Reject(RejectReason::DecodeFailure(reason))
        }
        Err(e) => Validation::Reject(RejectReason::DecodeFailure(e.to_string())),
        Ok(img) => {
            let mut pixels = img.pixels();
            let first = pixels.next().copied();
            if pixels.all(|p| Some(*p) == first) {
                Validation::Reject(RejectReason::ZeroVariance)
            } else {
                Validation::Accept
            }
        }
    }
}

/// Encode `[H, W, 3]` values in [0, 1] as PNG bytes.
pub fn encode_png(img: &Tensor) -> Result<Vec<u8>> {
    let (h, w, c) = img.dims3("image")?;
    if c != 3 {
        return Err(Error::shape(format!(
            "PNG export needs 3 channels, got {c}"
        )));
    }
    let raw: Vec<u8> = img
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let rgb = RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer matches dimensions");
    let mut out = Vec::new();
    rgb.write_to(&mut std::io::Cursor::new(&mut out), image::ImageFormat::Png)
        .map_err(|e| Error::Decode {
            what: "png encoder".into(),
            reason: e.to_string(),
        })?;
    Ok(out)
}
