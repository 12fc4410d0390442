//! Mammogram preprocessing.
//!
//! The per-image pipeline is: optional background removal at native
//! resolution, then a bilinear resize to the model's input size. Background
//! removal estimates a smooth background with a rolling ball, thresholds that
//! estimate with Huang's fuzzy-entropy rule, cleans the resulting map with
//! one erosion and one dilation, and zeroes everything outside it. Structures
//! too small for the ball (labels, tags, scanner marks) never reach the
//! background estimate and so fall outside the map.

mod augment;
mod birads;
mod geometry;
mod image;
mod morphology;
mod threshold;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use self::image::{BinaryMask, GrayImage};
pub use augment::{augment, AugmentConfig, AugmentParams};
pub use birads::{binarize_birads, binarize_raw, BinaryLabel, BiradsLabel};
pub use geometry::{flip_horizontal, resize_bilinear, rotate, sample_bilinear, Fill};
pub use morphology::{dilate, dilate_padded, erode, rolling_ball_background, RollingBall};
pub use threshold::{bin_of, bin_threshold, histogram256, huang_threshold, huang_threshold_bin, BINS};

/// Added to the batch standard deviation before dividing.
pub const STANDARDIZE_EPS: f64 = 1e-8;

/// Standardize a batch with the mean and (population) standard deviation of
/// all its pixels. Returns one flattened row per image.
pub fn standardize_batch(batch: &[GrayImage]) -> Result<Array2<f64>> {
    let first = batch
        .first()
        .ok_or_else(|| Error::contract("cannot standardize an empty batch"))?;
    if batch.iter().any(|img| !img.same_dims(first)) {
        return Err(Error::contract("batch images have differing dimensions"));
    }
    let len = first.pixels().len();
    let mut rows = Array2::zeros((batch.len(), len));
    for (mut row, img) in rows.rows_mut().into_iter().zip(batch) {
        row.assign(&ndarray::ArrayView1::from(img.pixels()));
    }
    Ok(standardize_rows(rows))
}

/// Standardize an already stacked batch in place (mean/std over all entries).
pub fn standardize_rows(mut rows: Array2<f64>) -> Array2<f64> {
    let n = rows.len() as f64;
    if n == 0.0 {
        return rows;
    }
    let mean = rows.sum() / n;
    let var = rows.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let denom = var.sqrt() + STANDARDIZE_EPS;
    rows.mapv_inplace(|v| (v - mean) / denom);
    rows
}

/// Settings for background removal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackgroundConfig {
    pub rolling_ball_radius: usize,
    /// Square kernel radius for the erosion and dilation of the map.
    pub mask_radius: usize,
}

impl Default for BackgroundConfig {
    fn default() -> Self {
        BackgroundConfig {
            rolling_ball_radius: 5,
            mask_radius: 1,
        }
    }
}

/// Result of [`remove_background`].
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundRemoval {
    pub image: GrayImage,
    pub mask: BinaryMask,
    pub threshold: f64,
    pub background: GrayImage,
}

/// Zero everything outside the thresholded, morphologically cleaned
/// rolling-ball background estimate.
pub fn remove_background(img: &GrayImage, config: &BackgroundConfig) -> Result<BackgroundRemoval> {
    let RollingBall { background, .. } = rolling_ball_background(img, config.rolling_ball_radius)?;
    let threshold = huang_threshold(&background)?;
    let raw = BinaryMask::threshold(&background, threshold);
    let mask = dilate(&erode(&raw, config.mask_radius), config.mask_radius);
    let image = img.masked(&mask)?;
    Ok(BackgroundRemoval {
        image,
        mask,
        threshold,
        background,
    })
}

/// Per-image record of what the pipeline did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub threshold: Option<f64>,
    pub mask_foreground_fraction: Option<f64>,
    pub input_width: usize,
    pub input_height: usize,
}

/// The full per-image preprocessing pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub remove_background: bool,
    pub background: BackgroundConfig,
    pub width: usize,
    pub height: usize,
}

impl Default for Pipeline {
    fn default() -> Self {
        Pipeline {
            remove_background: true,
            background: BackgroundConfig::default(),
            width: 224,
            height: 224,
        }
    }
}

impl Pipeline {
    pub fn run(&self, img: &GrayImage) -> Result<(GrayImage, Provenance)> {
        let mut provenance = Provenance {
            threshold: None,
            mask_foreground_fraction: None,
            input_width: img.width(),
            input_height: img.height(),
        };
        let cleaned = if self.remove_background {
            let removal = remove_background(img, &self.background)?;
            provenance.threshold = Some(removal.threshold);
            provenance.mask_foreground_fraction = Some(removal.mask.fraction());
            removal.image
        } else {
            img.clone()
        };
        let out = resize_bilinear(&cleaned, self.width, self.height)?;
        Ok((out, provenance))
    }
}
