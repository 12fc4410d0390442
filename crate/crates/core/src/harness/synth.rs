//! Synthetic mammogram-like corpora.
//!
//! Each image shows a bright half-ellipse "lobe" attached to the left or
//! right border over a dark background, with faint diffuse blobs as benign
//! texture. Positive images add one compact bright mass inside the lobe.
//! The domain shift is deliberately non-affine (gamma, mass contrast, lobe
//! placement, noise) because per-batch standardization removes any purely
//! affine intensity change.

use std::path::Path;

use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{Manifest, ManifestRecord, Side, View};
use crate::error::{Error, Result};
use crate::preprocess::{BinaryMask, BiradsLabel, GrayImage};
use crate::rng::{stream, Rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_patients: usize,
    pub images_per_patient: usize,
    pub positive_rate: f64,
    /// 0 is the reference domain; larger values drift further.
    pub domain_shift: f64,
    pub tag_artifacts: bool,
    /// Side length in pixels.
    pub size: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_patients: 87,
            images_per_patient: 3,
            positive_rate: 0.05,
            domain_shift: 0.0,
            tag_artifacts: false,
            size: 32,
            seed: 0,
        }
    }
}

/// Generated images with their manifest and ground-truth masks.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub manifest: Manifest,
    pub images: Vec<GrayImage>,
    pub lobe_masks: Vec<BinaryMask>,
    pub tag_masks: Vec<BinaryMask>,
}

struct Blob {
    x: f64,
    y: f64,
    sigma: f64,
    amplitude: f64,
}

impl Blob {
    fn at(&self, x: f64, y: f64) -> f64 {
        let d2 = (x - self.x).powi(2) + (y - self.y).powi(2);
        self.amplitude * (-d2 / (2.0 * self.sigma * self.sigma)).exp()
    }
}

struct Lobe {
    left: bool,
    cy: f64,
    rx: f64,
    ry: f64,
}

impl Lobe {
    /// Normalized elliptical radius; inside when `< 1`.
    fn rho(&self, x: f64, y: f64, size: f64) -> f64 {
        let dx = if self.left { x } else { size - 1.0 - x };
        ((dx / self.rx).powi(2) + ((y - self.cy) / self.ry).powi(2)).sqrt()
    }

    fn random_point(&self, max_rho: f64, size: f64, rng: &mut Rng) -> (f64, f64) {
        let r = max_rho * rng.random::<f64>().sqrt();
        let theta = rng.random_range(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2);
        let dx = r * self.rx * theta.cos();
        let y = self.cy + r * self.ry * theta.sin();
        let x = if self.left { dx } else { size - 1.0 - dx };
        (x, y)
    }
}

struct Rendered {
    image: GrayImage,
    lobe: BinaryMask,
    tag: BinaryMask,
}

fn render(spec: &SynthSpec, positive: bool, side: Side, rng: &mut Rng) -> Result<Rendered> {
    let s = spec.size as f64;
    let shift = spec.domain_shift;
    let lobe = Lobe {
        left: side == Side::Left,
        cy: s / 2.0 + rng.random_range(-0.06..0.06) * s + 0.08 * shift * s,
        rx: rng.random_range(0.5..0.66) * s * (1.0 - 0.1 * shift).max(0.6),
        ry: rng.random_range(0.36..0.44) * s,
    };
    let level = rng.random_range(0.42..0.56) + 0.08 * shift;
    let phase: (f64, f64) = (rng.random_range(0.0..6.3), rng.random_range(0.0..6.3));
    let freq = rng.random_range(0.15..0.3);

    let mut blobs = Vec::new();
    for _ in 0..rng.random_range(2..=3) {
        let (x, y) = lobe.random_point(0.8, s, rng);
        blobs.push(Blob {
            x,
            y,
            sigma: rng.random_range(0.1..0.16) * s,
            amplitude: rng.random_range(0.04..0.1),
        });
    }
    if positive {
        let (x, y) = lobe.random_point(0.65, s, rng);
        blobs.push(Blob {
            x,
            y,
            sigma: rng.random_range(0.07..0.09) * s,
            amplitude: rng.random_range(0.3..0.4) * (1.0 - 0.45 * shift).max(0.2),
        });
    }

    let noise = Normal::new(0.0, 0.012 + 0.02 * shift)
        .map_err(|e| Error::config(format!("invalid noise level: {e}")))?;
    let gamma = 1.0 + 0.7 * shift;
    let mut lobe_bits = Vec::with_capacity(spec.size * spec.size);
    let mut data = Vec::with_capacity(spec.size * spec.size);
    for y in 0..spec.size {
        for x in 0..spec.size {
            let (fx, fy) = (x as f64, y as f64);
            let rho = lobe.rho(fx, fy, s);
            let inside = rho < 1.0;
            let mut v = if inside {
                let texture = 0.025 * ((fx * freq + phase.0).sin() * (fy * freq + phase.1).cos());
                level * (0.82 + 0.18 * (1.0 - rho * rho)) + texture + blobs.iter().map(|b| b.at(fx, fy)).sum::<f64>()
            } else {
                0.03
            };
            v += noise.sample(rng);
            lobe_bits.push(inside);
            data.push(v.clamp(0.0, 1.0).powf(gamma));
        }
    }
    let mut image = GrayImage::new(spec.size, spec.size, data)?;
    let lobe_mask = BinaryMask::new(spec.size, spec.size, lobe_bits)?;

    let mut tag_bits = vec![false; spec.size * spec.size];
    if spec.tag_artifacts {
        let w = rng.random_range(3..=6).min(spec.size / 4);
        let h = rng.random_range(2..=4).min(spec.size / 4);
        let x0 = if lobe.left { spec.size - 2 - w } else { 2 };
        let y0 = if rng.random::<bool>() { 2 } else { spec.size - 2 - h };
        let value = rng.random_range(0.9..1.0);
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                if !lobe_mask.get(x, y) {
                    image.set(x, y, value);
                    tag_bits[y * spec.size + x] = true;
                }
            }
        }
    }
    Ok(Rendered {
        image,
        lobe: lobe_mask,
        tag: BinaryMask::new(spec.size, spec.size, tag_bits)?,
    })
}

/// Generate a corpus. The number of positive images is
/// `round(total · positive_rate)`, so class proportions hold exactly.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<SynthCorpus> {
    if !(spec.positive_rate > 0.0 && spec.positive_rate < 1.0) {
        return Err(Error::config("positive rate must lie in (0, 1)"));
    }
    if spec.n_patients == 0 || spec.images_per_patient == 0 {
        return Err(Error::config("need at least one patient and one image per patient"));
    }
    if spec.size < 16 {
        return Err(Error::config("synthetic images must be at least 16 pixels wide"));
    }
    if !spec.domain_shift.is_finite() || spec.domain_shift < 0.0 {
        return Err(Error::config("domain shift must be finite and nonnegative"));
    }
    let mut rng = stream(spec.seed, Stream::Synth);
    let total = spec.n_patients * spec.images_per_patient;
    let n_pos = ((total as f64 * spec.positive_rate).round() as usize).clamp(1, total - 1);
    let mut positive = vec![false; total];
    for i in index::sample(&mut rng, total, n_pos) {
        positive[i] = true;
    }

    let mut records = Vec::with_capacity(total);
    let mut images = Vec::with_capacity(total);
    let mut lobe_masks = Vec::with_capacity(total);
    let mut tag_masks = Vec::with_capacity(total);
    for p in 0..spec.n_patients {
        let patient_id = format!("P{p:04}");
        let side = if rng.random::<bool>() { Side::Left } else { Side::Right };
        let age = rng.random_range(35..=80);
        for k in 0..spec.images_per_patient {
            let idx = p * spec.images_per_patient + k;
            let rendered = render(spec, positive[idx], side, &mut rng)?;
            let category = if positive[idx] {
                rng.random_range(4..=5)
            } else {
                rng.random_range(1..=2)
            };
            records.push(ManifestRecord {
                image_path: format!("{patient_id}_{k}.png"),
                patient_id: patient_id.clone(),
                birads: BiradsLabel::new(category)?,
                view: if k % 2 == 0 { View::Cc } else { View::Mlo },
                side,
                age: Some(age),
            });
            images.push(rendered.image);
            lobe_masks.push(rendered.lobe);
            tag_masks.push(rendered.tag);
        }
    }
    Ok(SynthCorpus {
        manifest: Manifest::new(records, ".")?,
        images,
        lobe_masks,
        tag_masks,
    })
}

/// Write every image as a 16-bit PNG plus `manifest.csv` into `dir`.
pub fn write_corpus(corpus: &SynthCorpus, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (record, image) in corpus.manifest.records.iter().zip(&corpus.images) {
        image.save(&dir.join(&record.image_path))?;
    }
    corpus.manifest.save(&dir.join("manifest.csv"))
}
