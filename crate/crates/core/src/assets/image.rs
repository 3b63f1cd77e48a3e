use std::fs;
use std::path::Path;

use crate::error::{validate, Error, Result};

use super::tensor::TensorBlob;

/// Row-major interleaved float image. Values are unbounded; clamping happens
/// only when exporting to 8-bit formats.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Self {
            width,
            height,
            channels,
            pixels: vec![value; width * height * channels],
        }
    }

    pub fn from_pixels(width: usize, height: usize, channels: usize, pixels: Vec<f32>) -> Result<Self> {
        validate(pixels.len() == width * height * channels, || {
            format!(
                "{}x{}x{} image needs {} values, got {}",
                width,
                height,
                channels,
                width * height * channels,
                pixels.len()
            )
        })?;
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn from_f64(width: usize, height: usize, channels: usize, values: &[f64]) -> Result<Self> {
        Self::from_pixels(width, height, channels, values.iter().map(|&v| v as f32).collect())
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.pixels[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        let i = self.index(x, y, c);
        self.pixels[i] = v;
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.pixels.iter().map(|&v| v as f64).collect()
    }

    /// Keeps the first `n` channels.
    pub fn take_channels(&self, n: usize) -> ImageBuffer {
        let n = n.min(self.channels);
        let mut out = ImageBuffer::new(self.width, self.height, n);
        for p in 0..self.width * self.height {
            for c in 0..n {
                out.pixels[p * n + c] = self.pixels[p * self.channels + c];
            }
        }
        out
    }

    /// Mirror across the vertical axis (x -> width-1-x).
    pub fn mirror_horizontal(&self) -> ImageBuffer {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..self.channels {
                    out.set(self.width - 1 - x, y, c, self.get(x, y, c));
                }
            }
        }
        out
    }

    pub fn to_blob(&self) -> TensorBlob {
        TensorBlob::new(vec![self.height, self.width, self.channels], self.pixels.clone())
            .expect("image dimensions are positive")
    }

    /// Inverse of [`ImageBuffer::to_blob`]: a `[height, width, channels]` tensor.
    pub fn from_blob(blob: &TensorBlob) -> Result<Self> {
        validate(blob.shape.len() == 3, || format!("image tensor must be 3-D, got shape {:?}", blob.shape))?;
        Self::from_pixels(blob.shape[1], blob.shape[0], blob.shape[2], blob.data.clone())
    }

    pub fn mse(&self, other: &ImageBuffer) -> Result<f64> {
        validate(
            self.width == other.width && self.height == other.height && self.channels == other.channels,
            || "image dimensions differ".into(),
        )?;
        let n = self.pixels.len().max(1) as f64;
        Ok(self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum::<f64>()
            / n)
    }

    /// PSNR in dB against a peak value of 1.
    pub fn psnr(&self, other: &ImageBuffer) -> Result<f64> {
        let mse = self.mse(other)?;
        Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
    }

    /// Tiles equally sized images into a grid with `cols` columns.
    pub fn tile(images: &[ImageBuffer], cols: usize) -> Result<ImageBuffer> {
        let first = images
            .first()
            .ok_or_else(|| Error::Validation("cannot tile zero images".into()))?;
        let cols = cols.max(1).min(images.len());
        let rows = images.len().div_ceil(cols);
        let (w, h, ch) = (first.width, first.height, first.channels);
        let mut out = ImageBuffer::new(w * cols, h * rows, ch);
        for (k, img) in images.iter().enumerate() {
            validate(img.width == w && img.height == h && img.channels == ch, || {
                "tile images must share dimensions".into()
            })?;
            let (ox, oy) = ((k % cols) * w, (k / cols) * h);
            for y in 0..h {
                for x in 0..w {
                    for c in 0..ch {
                        out.set(ox + x, oy + y, c, img.get(x, y, c));
                    }
                }
            }
        }
        Ok(out)
    }

    /// Binary P6 encoding of the first three channels; single-channel images
    /// are replicated to gray and a missing third channel is written as zero.
    pub fn ppm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.reserve(self.width * self.height * 3);
        for p in 0..self.width * self.height {
            let px = &self.pixels[p * self.channels..(p + 1) * self.channels];
            for c in 0..3 {
                let v = match self.channels {
                    1 => px[0],
                    n if c < n => px[c],
                    _ => 0.0,
                };
                out.push(quantize(v));
            }
        }
        out
    }
}

/// round(255 * clamp(v, 0, 1)) with ties away from zero; NaN maps to 0.
#[inline]
fn quantize(v: f32) -> u8 {
    if v.is_nan() {
        return 0;
    }
    (255.0 * v.clamp(0.0, 1.0)).round() as u8
}

pub fn write_ppm(path: impl AsRef<Path>, img: &ImageBuffer) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, img.ppm_bytes()).map_err(|e| Error::io(path, e))
}
