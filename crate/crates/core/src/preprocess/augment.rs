use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::geometry::{flip_horizontal, rotate, Fill};
use super::GrayImage;
use crate::rng::Rng;

/// Random flip/rotation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    /// Angles are drawn uniformly from `[−max, +max]` degrees.
    pub max_rotation_deg: f64,
    #[serde(default)]
    pub fill: Fill,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip_prob: 0.5,
            max_rotation_deg: 10.0,
            fill: Fill::Zero,
        }
    }
}

impl AugmentConfig {
    /// Never flips or rotates.
    pub fn identity() -> Self {
        AugmentConfig {
            flip_prob: 0.0,
            max_rotation_deg: 0.0,
            fill: Fill::Zero,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.flip_prob <= 0.0 && self.max_rotation_deg == 0.0
    }
}

/// One concrete draw of the augmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub flip: bool,
    pub angle_deg: f64,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        flip: false,
        angle_deg: 0.0,
    };

    /// Draw flip then angle. Nothing is drawn for an identity config.
    pub fn sample(config: &AugmentConfig, rng: &mut Rng) -> Self {
        if config.is_identity() {
            return Self::IDENTITY;
        }
        let flip = rng.random::<f64>() < config.flip_prob;
        let angle_deg = if config.max_rotation_deg > 0.0 {
            rng.random_range(-config.max_rotation_deg..=config.max_rotation_deg)
        } else {
            0.0
        };
        AugmentParams { flip, angle_deg }
    }

    pub fn apply(&self, img: &GrayImage, fill: Fill) -> GrayImage {
        let flipped = if self.flip {
            flip_horizontal(img)
        } else {
            img.clone()
        };
        rotate(&flipped, self.angle_deg, fill)
    }
}

/// Random horizontal flip and small rotation with bilinear resampling.
pub fn augment(img: &GrayImage, config: &AugmentConfig, rng: &mut Rng) -> GrayImage {
    AugmentParams::sample(config, rng).apply(img, config.fill)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn image() -> GrayImage {
        GrayImage::from_fn(9, 7, |x, y| ((x * 3 + y * 5) % 13) as f64 / 12.0)
    }

    #[test]
    fn identity_params_leave_image_untouched() {
        let img = image();
        assert_eq!(AugmentParams::IDENTITY.apply(&img, Fill::Zero), img);
        let mut rng = stream(1, Stream::LabeledAugment);
        assert_eq!(augment(&img, &AugmentConfig::identity(), &mut rng), img);
    }

    #[test]
    fn double_flip_restores() {
        let img = image();
        let p = AugmentParams {
            flip: true,
            angle_deg: 0.0,
        };
        assert_eq!(p.apply(&p.apply(&img, Fill::Zero), Fill::Zero), img);
    }

    #[test]
    fn constant_image_survives_any_angle_with_edge_fill() {
        let img = GrayImage::filled(12, 12, 0.6).unwrap();
        for angle in [-10.0, -3.3, 0.7, 9.99, 45.0, 90.0] {
            let p = AugmentParams {
                flip: true,
                angle_deg: angle,
            };
            let out = p.apply(&img, Fill::Edge);
            assert!(out.pixels().iter().all(|v| (v - 0.6).abs() < 1e-12), "{angle}");
        }
    }

    #[test]
    fn constant_image_interior_survives_zero_fill() {
        // With zero fill only the corners swept outside the frame change.
        let img = GrayImage::filled(21, 21, 0.6).unwrap();
        let out = AugmentParams {
            flip: false,
            angle_deg: 10.0,
        }
        .apply(&img, Fill::Zero);
        for y in 0..21 {
            for x in 0..21 {
                let r2 = (x as f64 - 10.0).powi(2) + (y as f64 - 10.0).powi(2);
                if r2 <= 9.0 * 9.0 {
                    assert!((out.get(x, y) - 0.6).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn sampling_is_reproducible_and_bounded() {
        let cfg = AugmentConfig::default();
        let mut a = stream(5, Stream::LabeledAugment);
        let mut b = stream(5, Stream::LabeledAugment);
        let mut flips = 0;
        for _ in 0..2000 {
            let pa = AugmentParams::sample(&cfg, &mut a);
            assert_eq!(pa, AugmentParams::sample(&cfg, &mut b));
            assert!(pa.angle_deg.abs() <= 10.0);
            flips += usize::from(pa.flip);
        }
        assert!((900..1100).contains(&flips), "{flips}");
    }
}
