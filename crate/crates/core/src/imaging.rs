//! In-memory images and their on-disk encodings.
//!
//! Color images are 8-bit RGB PNGs. Scalar images (depth) are stored as raw
//! little-endian `f32` in row-major order with an 8-bit grayscale PNG preview.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major RGB image with channels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut img = Self::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            for c in 0..3 {
                px[c] = rgb[c] as f32;
            }
        }
        img
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [
            self.data[i] as f64,
            self.data[i + 1] as f64,
            self.data[i + 2] as f64,
        ]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        for c in 0..3 {
            self.data[i + c] = rgb[c] as f32;
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.data.iter().map(|&v| to_u8(v)).collect();
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes)
            .ok_or_else(|| Error::format(path, "pixel buffer size mismatch"))?;
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: path.into(),
                source,
            })
    }

    /// The image as it reads back after an 8-bit PNG round trip.
    pub fn quantized(&self) -> RgbImage {
        RgbImage {
            data: self.data.iter().map(|&v| to_u8(v) as f32 / 255.0).collect(),
            ..*self
        }
    }

    /// Loads a PNG; an alpha channel is composited over white.
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.into(),
            source,
        })?;
        let (width, height) = (img.width() as usize, img.height() as usize);
        let rgba = img.to_rgba8();
        let mut out = RgbImage::new(width, height);
        for (dst, px) in out.data.chunks_exact_mut(3).zip(rgba.pixels()) {
            let a = px[3] as f32 / 255.0;
            for c in 0..3 {
                let v = px[c] as f32 / 255.0;
                dst[c] = if px[3] == 255 { v } else { v * a + (1.0 - a) };
            }
        }
        Ok(out)
    }

    /// Mean squared error over pixels and channels.
    pub fn mse(&self, other: &RgbImage) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum::<f64>()
            / self.data.len() as f64
    }
}

/// Peak signal-to-noise ratio for signals in `[0, 1]`.
pub fn psnr(mse: f64) -> f64 {
    -10.0 * mse.log10()
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Row-major single-channel float image.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl ScalarImage {
    pub fn new(width: usize, height: usize) -> Self {
        ScalarImage {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Raw little-endian `f32` payload, no header.
    pub fn save_raw(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load_raw(path: &Path, width: usize, height: usize) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() != width * height * 4 {
            return Err(Error::format(
                path,
                format!(
                    "expected {} bytes for a {width}x{height} float image, found {}",
                    width * height * 4,
                    bytes.len()
                ),
            ));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Ok(ScalarImage {
            width,
            height,
            data,
        })
    }

    /// Grayscale preview normalized by the largest value.
    pub fn save_preview_png(&self, path: &Path) -> Result<()> {
        let max = self
            .data
            .iter()
            .fold(0.0f32, |m, &v| if v.is_finite() { m.max(v) } else { m });
        let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
        let bytes: Vec<u8> = self.data.iter().map(|&v| to_u8(v * scale)).collect();
        let buf = image::GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .ok_or_else(|| Error::format(path, "pixel buffer size mismatch"))?;
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: path.into(),
                source,
            })
    }
}

/// Frame file name used by every renderer output directory.
pub fn frame_name(index: usize) -> String {
    format!("frame_{index:04}.png")
}
