use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};

use crate::error::{Error, Result};

/// Row-major grayscale image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width.checked_mul(height) != Some(data.len()) {
            return Err(Error::contract(format!(
                "{width}x{height} image needs {} values, got {}",
                width.saturating_mul(height),
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::contract(format!("intensity {v} outside [0, 1]")));
        }
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Build from a function of `(x, y)`; values are clamped into `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(clamp_unit(f(x, y)));
            }
        }
        GrayImage {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.data
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = clamp_unit(value);
    }

    pub fn same_dims(&self, other: &GrayImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Zero every pixel outside `mask`.
    pub fn masked(&self, mask: &BinaryMask) -> Result<GrayImage> {
        if mask.width() != self.width || mask.height() != self.height {
            return Err(Error::contract("mask and image dimensions differ"));
        }
        Ok(GrayImage {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(mask.bits())
                .map(|(&v, &keep)| if keep { v } else { 0.0 })
                .collect(),
        })
    }

    /// Read an 8- or 16-bit grayscale PNG or PGM; values are divided by the
    /// bit depth's maximum. Color images are converted to luma.
    pub fn load(path: &Path) -> Result<GrayImage> {
        let img = image::open(path).map_err(|e| Error::format(path, e.to_string()))?;
        Ok(Self::from_dynamic(img))
    }

    pub fn from_dynamic(img: DynamicImage) -> GrayImage {
        let (width, height) = (img.width() as usize, img.height() as usize);
        let data = match img {
            DynamicImage::ImageLuma8(buf) => buf.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
            DynamicImage::ImageLuma16(buf) => {
                buf.pixels().map(|p| p.0[0] as f64 / 65535.0).collect()
            }
            other if other.color().bytes_per_pixel() > 4 => other
                .to_luma16()
                .pixels()
                .map(|p| p.0[0] as f64 / 65535.0)
                .collect(),
            other => other.to_luma8().pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        };
        GrayImage {
            width,
            height,
            data,
        }
    }

    /// Quantize to 16 bits for storage.
    pub fn to_luma16(&self) -> ImageBuffer<Luma<u16>, Vec<u16>> {
        let raw = self
            .data
            .iter()
            .map(|v| (v * 65535.0).round() as u16)
            .collect();
        ImageBuffer::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer matches dimensions")
    }

    /// Write a 16-bit grayscale PNG (or PGM when the extension is `.pgm`).
    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_luma16()
            .save(path)
            .map_err(|e| Error::format(path, e.to_string()))
    }
}

fn clamp_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// Row-major boolean grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width.checked_mul(height) != Some(bits.len()) {
            return Err(Error::contract("mask dimensions do not match bit count"));
        }
        Ok(BinaryMask {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        BinaryMask {
            width,
            height,
            bits,
        }
    }

    /// Pixels at or above `threshold`.
    pub fn threshold(img: &GrayImage, threshold: f64) -> BinaryMask {
        BinaryMask {
            width: img.width(),
            height: img.height(),
            bits: img.pixels().iter().map(|&v| v >= threshold).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn fraction(&self) -> f64 {
        if self.bits.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.bits.len() as f64
        }
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    /// True when every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes_and_values() {
        assert!(GrayImage::new(2, 2, vec![0.0; 3]).is_err());
        assert!(GrayImage::new(1, 1, vec![1.5]).is_err());
        assert!(GrayImage::new(1, 1, vec![f64::NAN]).is_err());
        assert!(BinaryMask::new(2, 2, vec![true; 5]).is_err());
    }

    #[test]
    fn png_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::from_fn(7, 5, |x, y| (x * 5 + y) as f64 / 40.0);
        for name in ["a.png", "a.pgm"] {
            let path = dir.path().join(name);
            img.save(&path).unwrap();
            let back = GrayImage::load(&path).unwrap();
            assert!(back.same_dims(&img));
            for (a, b) in back.pixels().iter().zip(img.pixels()) {
                assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-12);
            }
        }
    }

    #[test]
    fn eight_bit_inputs_scale_by_255() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.pgm");
        let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
            ImageBuffer::from_raw(2, 1, vec![0u8, 255]).unwrap();
        buf.save(&path).unwrap();
        let img = GrayImage::load(&path).unwrap();
        assert_eq!(img.pixels(), &[0.0, 1.0]);
    }

    #[test]
    fn masking_zeroes_outside() {
        let img = GrayImage::filled(2, 2, 0.4).unwrap();
        let mask = BinaryMask::new(2, 2, vec![true, false, false, true]).unwrap();
        assert_eq!(img.masked(&mask).unwrap().pixels(), &[0.4, 0.0, 0.0, 0.4]);
    }
}
