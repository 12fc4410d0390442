//! Dataset dissimilarity in a model's feature space.
//!
//! Two image sets are compared batch by batch: both batches are mapped to
//! features, each feature column is sorted so it describes a distribution
//! rather than a particular ordering of images, and the cosine distances of
//! the sorted columns are summed over features.

use ndarray::{Array2, ArrayView1};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Summary;
use crate::model::{extract_penultimate, ModelParams};
use crate::preprocess::{standardize_batch, GrayImage};
use crate::rng::Rng;

/// `1 − a·b / (‖a‖‖b‖)`, in `[0, 2]`.
pub fn cosine_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::contract("cosine distance needs equal lengths"));
    }
    let na = a.dot(&a);
    let nb = b.dot(&b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::contract("cosine distance of a zero vector"));
    }
    if a == b {
        return Ok(0.0);
    }
    Ok((1.0 - a.dot(&b) / (na * nb).sqrt()).clamp(0.0, 2.0))
}

fn sorted(col: ArrayView1<f64>) -> ndarray::Array1<f64> {
    let mut v = col.to_vec();
    v.sort_by(f64::total_cmp);
    v.into()
}

/// Sum over feature columns of the cosine distance between the two sorted
/// columns. With `raw_order` the columns are compared as given. Columns that
/// are zero on either side contribute nothing.
pub fn feature_dissimilarity_with(a: &Array2<f64>, b: &Array2<f64>, raw_order: bool) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::contract(format!(
            "feature matrices differ in shape: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    if a.nrows() < 2 {
        return Err(Error::contract("need at least two rows per feature matrix"));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::contract("features must be finite"));
    }
    let mut total = 0.0;
    for (ca, cb) in a.columns().into_iter().zip(b.columns()) {
        let (ca, cb) = if raw_order {
            (ca.to_owned(), cb.to_owned())
        } else {
            (sorted(ca), sorted(cb))
        };
        if ca.iter().all(|&v| v == 0.0) || cb.iter().all(|&v| v == 0.0) {
            continue;
        }
        total += cosine_distance(ca.view(), cb.view())?;
    }
    Ok(total)
}

/// [`feature_dissimilarity_with`] on sorted columns.
pub fn feature_dissimilarity(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    feature_dissimilarity_with(a, b, false)
}

/// Maps a batch of images to one feature row per image.
pub trait FeatureSource {
    fn feature_dim(&self) -> usize;
    fn extract(&self, images: &[GrayImage]) -> Result<Array2<f64>>;
}

/// How [`PenultimateFeatures`] normalizes pixels before the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Standardize each batch on its own statistics.
    Batch,
    /// `(x − mean) / std` with fixed values, so intensity differences
    /// between datasets survive.
    Fixed { mean: f64, std: f64 },
}

/// Last-hidden-layer activations of a classifier.
#[derive(Debug, Clone)]
pub struct PenultimateFeatures {
    pub params: ModelParams,
    pub normalization: Normalization,
}

impl FeatureSource for PenultimateFeatures {
    fn feature_dim(&self) -> usize {
        *self
            .params
            .architecture()
            .hidden_sizes
            .last()
            .expect("architectures have a hidden layer")
    }

    fn extract(&self, images: &[GrayImage]) -> Result<Array2<f64>> {
        let inputs = match self.normalization {
            Normalization::Batch => standardize_batch(images)?,
            Normalization::Fixed { mean, std } => {
                let rows: Vec<&[f64]> = images.iter().map(|i| i.pixels()).collect();
                let denom = std + crate::preprocess::STANDARDIZE_EPS;
                crate::model::stack_rows(&rows)?.mapv(|v| (v - mean) / denom)
            }
        };
        extract_penultimate(&self.params, &inputs)
    }
}

/// Mean and sample standard deviation of all pixel intensities; the usual
/// reference for [`Normalization::Fixed`].
pub fn pixel_statistics(images: &[GrayImage]) -> Result<(f64, f64)> {
    let values: Vec<f64> = images.iter().flat_map(|i| i.pixels().iter().copied()).collect();
    let s = Summary::of(&values)?;
    Ok((s.mean, s.std))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DedimsConfig {
    pub batches: usize,
    pub batch_size: usize,
    pub raw_order: bool,
}

impl Default for DedimsConfig {
    fn default() -> Self {
        DedimsConfig {
            batches: 10,
            batch_size: 40,
            raw_order: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DissimilarityReport {
    pub mean: f64,
    pub std: f64,
    pub per_batch: Vec<f64>,
    pub batches: usize,
    pub batch_size: usize,
}

/// Repeat `batches` times: draw `batch_size` images without replacement from
/// each set, extract features and accumulate the dissimilarity.
pub fn dedims(
    source: &dyn FeatureSource,
    a: &[GrayImage],
    b: &[GrayImage],
    config: &DedimsConfig,
    rng: &mut Rng,
) -> Result<DissimilarityReport> {
    if config.batches == 0 || config.batch_size < 2 {
        return Err(Error::config("dedims needs at least one batch of two or more images"));
    }
    for (name, set) in [("first", a), ("second", b)] {
        if set.len() < config.batch_size {
            return Err(Error::data(format!(
                "{name} dataset has {} images, fewer than the batch size {}",
                set.len(),
                config.batch_size
            )));
        }
    }
    let mut per_batch = Vec::with_capacity(config.batches);
    for _ in 0..config.batches {
        let ia = index::sample(rng, a.len(), config.batch_size);
        let ib = index::sample(rng, b.len(), config.batch_size);
        let batch_a: Vec<GrayImage> = ia.iter().map(|i| a[i].clone()).collect();
        let batch_b: Vec<GrayImage> = ib.iter().map(|i| b[i].clone()).collect();
        let fa = source.extract(&batch_a)?;
        let fb = source.extract(&batch_b)?;
        if fa.ncols() != source.feature_dim() || fb.ncols() != source.feature_dim() {
            return Err(Error::contract("feature extractor returned the wrong width"));
        }
        per_batch.push(feature_dissimilarity_with(&fa, &fb, config.raw_order)?);
    }
    let Summary { mean, std } = Summary::of(&per_batch)?;
    Ok(DissimilarityReport {
        mean,
        std,
        per_batch,
        batches: config.batches,
        batch_size: config.batch_size,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ClassifierConfig};
    use crate::rng::{stream, Stream};
    use approx::assert_abs_diff_eq;
    use ndarray::arr1;

    #[test]
    fn cosine_examples() {
        let a = arr1(&[1.0, 0.0]);
        assert_eq!(cosine_distance(a.view(), a.view()).unwrap(), 0.0);
        assert_abs_diff_eq!(cosine_distance(a.view(), arr1(&[0.0, 3.0]).view()).unwrap(), 1.0);
        assert_abs_diff_eq!(cosine_distance(a.view(), arr1(&[-1.0, 0.0]).view()).unwrap(), 2.0);
        assert!(cosine_distance(a.view(), arr1(&[0.0, 0.0]).view()).is_err());
    }

    #[test]
    fn opposite_columns_sum_to_two_per_feature() {
        // Compared as given, -v is antiparallel to v in every column.
        let v = [0.5, 1.0, 2.0, 3.5];
        let a = Array2::from_shape_fn((4, 3), |(i, _)| v[i]);
        let b = a.mapv(|x| -x);
        assert_abs_diff_eq!(feature_dissimilarity_with(&a, &b, true).unwrap(), 6.0, epsilon = 1e-12);
        assert_eq!(feature_dissimilarity(&a, &a).unwrap(), 0.0);
        // Sorting reverses -v, so only a constant column stays antiparallel.
        let c = Array2::from_elem((4, 3), 1.5);
        assert_abs_diff_eq!(feature_dissimilarity(&c, &c.mapv(|x| -x)).unwrap(), 6.0, epsilon = 1e-12);
        let sorted_neg = [-3.5, -2.0, -1.0, -0.5];
        let dot: f64 = v.iter().zip(sorted_neg).map(|(x, y)| x * y).sum();
        let norm: f64 = v.iter().map(|x| x * x).sum();
        let expected = 3.0 * (1.0 - dot / norm);
        assert_abs_diff_eq!(feature_dissimilarity(&a, &b).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn zero_columns_contribute_nothing() {
        let a = Array2::from_shape_fn((3, 2), |(i, j)| if j == 0 { 0.0 } else { i as f64 + 1.0 });
        let b = Array2::from_shape_fn((3, 2), |(i, _)| 3.0 - i as f64);
        assert_eq!(feature_dissimilarity(&a, &b).unwrap(), 0.0);
        assert!(feature_dissimilarity_with(&a, &b, true).unwrap() > 0.0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = Array2::<f64>::ones((3, 2));
        assert!(feature_dissimilarity(&a, &Array2::ones((3, 3))).is_err());
        assert!(feature_dissimilarity(&Array2::ones((1, 2)), &Array2::ones((1, 2))).is_err());
    }

    fn extractor() -> PenultimateFeatures {
        PenultimateFeatures {
            params: init_model(&ClassifierConfig {
                seed: 11,
                ..ClassifierConfig::mlp(5, 5, vec![8])
            })
            .unwrap(),
            normalization: Normalization::Fixed { mean: 0.5, std: 0.25 },
        }
    }

    fn dataset(n: usize, shift: f64, seed: u64) -> Vec<GrayImage> {
        use rand::Rng as _;
        let mut rng = stream(seed, Stream::Synth);
        (0..n)
            .map(|_| {
                let base: f64 = rng.random_range(0.2..0.4);
                GrayImage::from_fn(5, 5, |x, y| base + shift + 0.02 * (x + y) as f64 + rng.random_range(0.0..0.05))
            })
            .collect()
    }

    #[test]
    fn identical_draws_give_zero() {
        let data = dataset(40, 0.0, 1);
        let src = extractor();
        let config = DedimsConfig { batches: 3, ..DedimsConfig::default() };
        let r = dedims(&src, &data, &data, &config, &mut stream(1, Stream::Dedims)).unwrap();
        // batch_size equals the set size, so both sides see every image
        assert!(r.per_batch.iter().all(|&d| d == 0.0));
        assert_eq!(r.per_batch.len(), 3);
    }

    #[test]
    fn intensity_shift_raises_dissimilarity() {
        let src = extractor();
        let config = DedimsConfig { batches: 5, batch_size: 20, raw_order: false };
        for seed in 0..5 {
            let a = dataset(60, 0.0, 100 + seed);
            let same = dataset(60, 0.0, 200 + seed);
            let shifted = dataset(60, 0.3, 200 + seed);
            let base = dedims(&src, &a, &same, &config, &mut stream(seed, Stream::Dedims)).unwrap();
            let far = dedims(&src, &a, &shifted, &config, &mut stream(seed, Stream::Dedims)).unwrap();
            assert!(far.mean > base.mean, "seed {seed}: {} vs {}", far.mean, base.mean);
        }
    }

    #[test]
    fn small_datasets_are_rejected_and_runs_repeat() {
        let src = extractor();
        let data = dataset(30, 0.0, 4);
        assert!(matches!(
            dedims(&src, &data, &data, &DedimsConfig::default(), &mut stream(0, Stream::Dedims)),
            Err(Error::Data(_))
        ));
        let config = DedimsConfig { batches: 4, batch_size: 10, raw_order: false };
        let run = || dedims(&src, &data, &dataset(30, 0.1, 5), &config, &mut stream(3, Stream::Dedims)).unwrap();
        assert_eq!(run(), run());
    }
}
