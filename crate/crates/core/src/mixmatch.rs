//! MixMatch semi-supervised training.
//!
//! One step takes a labeled and an unlabeled minibatch. Labeled images are
//! augmented once; each unlabeled image is augmented `K` times, and the
//! averaged predictions are sharpened into a pseudo-label. Both sets are then
//! mixed with partners drawn from their shuffled union, and the model is fit
//! with a weighted soft cross-entropy on the labeled part plus a ramped,
//! weighted squared-error term on the unlabeled part.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    argmax_rows, backward, forward, predict_proba, sgd_step_in_place, ClassWeights, Gradients,
    Loss, ModelParams, OptimState,
};
use crate::preprocess::{augment, standardize_batch, AugmentConfig, GrayImage};
use crate::rng::Rng;

/// MixMatch hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixMatchConfig {
    /// Augmentations averaged per pseudo-label.
    pub k: usize,
    /// Sharpening temperature.
    pub temperature: f64,
    /// Beta(α, α) parameter for MixUp.
    pub alpha: f64,
    /// Unsupervised loss coefficient.
    pub gamma: f64,
    pub rampup_denominator: f64,
    /// Pseudo-label based class-balance correction.
    pub pbc_enabled: bool,
    pub augment: AugmentConfig,
    /// Use this `λ′` instead of sampling one. Mostly useful for testing.
    pub fixed_lambda: Option<f64>,
}

impl Default for MixMatchConfig {
    fn default() -> Self {
        MixMatchConfig {
            k: 2,
            temperature: 0.25,
            alpha: 0.75,
            gamma: 200.0,
            rampup_denominator: 3000.0,
            pbc_enabled: true,
            augment: AugmentConfig::default(),
            fixed_lambda: None,
        }
    }
}

impl MixMatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("mixmatch k must be at least 1"));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.temperature) {
            return Err(Error::config("sharpening temperature must be positive"));
        }
        if !positive(self.alpha) {
            return Err(Error::config("mixup alpha must be positive"));
        }
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(Error::config("gamma must be finite and nonnegative"));
        }
        if !positive(self.rampup_denominator) {
            return Err(Error::config("rampup denominator must be positive"));
        }
        if let Some(l) = self.fixed_lambda {
            if !(0.5..=1.0).contains(&l) {
                return Err(Error::config(format!("fixed lambda {l} outside [0.5, 1]")));
            }
        }
        Ok(())
    }
}

/// Temperature sharpening `q_i = p_i^{1/T} / Σ_j p_j^{1/T}`.
pub fn sharpen(p: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::contract("temperature must be positive"));
    }
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::contract(format!("not a probability vector: {p:?}")));
    }
    let max = p.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Err(Error::contract("cannot sharpen an all-zero vector"));
    }
    // Scaling by the max keeps p^{1/T} away from underflow.
    let powered: Vec<f64> = p.iter().map(|v| (v / max).powf(1.0 / temperature)).collect();
    let total: f64 = powered.iter().sum();
    Ok(powered.into_iter().map(|v| v / total).collect())
}

fn sharpen_rows(probs: &Array2<f64>, temperature: f64) -> Result<Array2<f64>> {
    let mut out = probs.clone();
    for mut row in out.rows_mut() {
        let q = sharpen(row.as_slice().expect("standard layout"), temperature)?;
        row.assign(&ArrayView1::from(&q));
    }
    Ok(out)
}

/// Model inputs paired with row-stochastic targets.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftBatch {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
}

impl SoftBatch {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }
}

/// Standardized, augmented copies of `images`.
fn augmented_inputs(images: &[GrayImage], config: &AugmentConfig, rng: &mut Rng) -> Result<Array2<f64>> {
    let augmented: Vec<GrayImage> = images.iter().map(|img| augment(img, config, rng)).collect();
    standardize_batch(&augmented)
}

/// Pseudo-label each image: average the predictions over `K` augmented
/// copies, then sharpen. The returned inputs are the first augmented copy.
pub fn guess_labels(
    params: &ModelParams,
    images: &[GrayImage],
    config: &MixMatchConfig,
    rng: &mut Rng,
) -> Result<SoftBatch> {
    config.validate()?;
    let mut first = None;
    let mut mean: Option<Array2<f64>> = None;
    for _ in 0..config.k {
        let inputs = augmented_inputs(images, &config.augment, rng)?;
        let probs = predict_proba(params, &inputs)?;
        match mean.as_mut() {
            Some(m) => *m += &probs,
            None => mean = Some(probs),
        }
        first.get_or_insert(inputs);
    }
    let mean = mean.expect("k >= 1") / config.k as f64;
    Ok(SoftBatch {
        inputs: first.expect("k >= 1"),
        targets: sharpen_rows(&mean, config.temperature)?,
    })
}

/// Draw `λ ~ Beta(α, α)` and return `max(λ, 1 − λ)`.
pub fn sample_mix_lambda(alpha: f64, rng: &mut Rng) -> Result<f64> {
    let beta = Beta::new(alpha, alpha)
        .map_err(|e| Error::contract(format!("invalid mixup alpha {alpha}: {e}")))?;
    let lambda: f64 = beta.sample(rng);
    Ok(lambda.max(1.0 - lambda))
}

/// `λ′·a + (1 − λ′)·b` for both the input and its label.
pub fn mix_up(
    a: (ArrayView1<f64>, ArrayView1<f64>),
    b: (ArrayView1<f64>, ArrayView1<f64>),
    lambda: f64,
) -> Result<(Array1<f64>, Array1<f64>)> {
    if a.0.len() != b.0.len() || a.1.len() != b.1.len() {
        return Err(Error::contract("mixup operands differ in shape"));
    }
    if !(0.5..=1.0).contains(&lambda) {
        return Err(Error::contract(format!("mixup lambda {lambda} outside [0.5, 1]")));
    }
    let mix = |x: &ArrayView1<f64>, y: &ArrayView1<f64>| lambda * x + (1.0 - lambda) * y;
    Ok((mix(&a.0, &b.0), mix(&a.1, &b.1)))
}

/// Output of [`mix_match_batch`].
#[derive(Debug, Clone, PartialEq)]
pub struct MixedBatch {
    pub labeled: SoftBatch,
    pub unlabeled: SoftBatch,
    /// Sharpened guesses for the unlabeled images, before mixing.
    pub pseudo_labels: Array2<f64>,
    pub lambda: f64,
}

pub fn one_hot(labels: &[usize], num_classes: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((labels.len(), num_classes));
    for (i, &y) in labels.iter().enumerate() {
        if y >= num_classes {
            return Err(Error::contract(format!("label {y} out of range")));
        }
        out[[i, y]] = 1.0;
    }
    Ok(out)
}

/// Build the mixed labeled and unlabeled sets for one step.
///
/// Draw order on `rng`: labeled augmentation, `K` rounds of unlabeled
/// augmentation, the pool shuffle, then `λ` (unless fixed).
pub fn mix_match_batch(
    params: &ModelParams,
    labeled: &[GrayImage],
    labels: &[usize],
    unlabeled: &[GrayImage],
    config: &MixMatchConfig,
    rng: &mut Rng,
) -> Result<MixedBatch> {
    config.validate()?;
    if labeled.is_empty() || unlabeled.is_empty() {
        return Err(Error::contract("mixmatch needs nonempty labeled and unlabeled batches"));
    }
    if labeled.len() != labels.len() {
        return Err(Error::contract("one label per labeled image required"));
    }
    let num_classes = params.architecture().num_classes;
    let xl = augmented_inputs(labeled, &config.augment, rng)?;
    let yl = one_hot(labels, num_classes)?;
    let guessed = guess_labels(params, unlabeled, config, rng)?;

    let pool_x = ndarray::concatenate![Axis(0), xl, guessed.inputs];
    let pool_y = ndarray::concatenate![Axis(0), yl, guessed.targets];
    let mut order: Vec<usize> = (0..pool_x.nrows()).collect();
    order.shuffle(rng);
    let lambda = match config.fixed_lambda {
        Some(l) => l,
        None => sample_mix_lambda(config.alpha, rng)?,
    };

    let mut mixed_x = Array2::zeros(pool_x.dim());
    let mut mixed_y = Array2::zeros(pool_y.dim());
    for (i, &j) in order.iter().enumerate() {
        let (x, y) = mix_up(
            (pool_x.row(i), pool_y.row(i)),
            (pool_x.row(j), pool_y.row(j)),
            lambda,
        )?;
        mixed_x.row_mut(i).assign(&x);
        mixed_y.row_mut(i).assign(&y);
    }
    let nl = labeled.len();
    let split = |m: &Array2<f64>| {
        (
            m.slice(ndarray::s![..nl, ..]).to_owned(),
            m.slice(ndarray::s![nl.., ..]).to_owned(),
        )
    };
    let (lx, ux) = split(&mixed_x);
    let (ly, uy) = split(&mixed_y);
    Ok(MixedBatch {
        labeled: SoftBatch {
            inputs: lx,
            targets: ly,
        },
        unlabeled: SoftBatch {
            inputs: ux,
            targets: uy,
        },
        pseudo_labels: pool_y.slice(ndarray::s![nl.., ..]).to_owned(),
        lambda,
    })
}

/// Linear rampup `min(step / denominator, 1)`.
pub fn rampup(step: u64, denominator: f64) -> f64 {
    (step as f64 / denominator).min(1.0)
}

pub fn class_counts(labels: &[usize], num_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; num_classes];
    for &y in labels {
        if y < num_classes {
            counts[y] += 1;
        }
    }
    counts
}

/// Inverse-frequency weights for the labeled and pseudo-labeled sides.
pub fn pbc_weights(
    labeled_counts: &[usize],
    pseudo_counts: &[usize],
) -> Result<(ClassWeights, ClassWeights)> {
    Ok((
        ClassWeights::inverse_frequency(labeled_counts)?,
        ClassWeights::inverse_frequency(pseudo_counts)?,
    ))
}

/// Class weights for the two loss terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub labeled: ClassWeights,
    pub unlabeled: ClassWeights,
}

impl LossWeights {
    pub fn uniform(num_classes: usize) -> Self {
        LossWeights {
            labeled: ClassWeights::uniform(num_classes),
            unlabeled: ClassWeights::uniform(num_classes),
        }
    }
}

/// Loss value and its parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompoundLoss {
    pub loss: f64,
    pub supervised: f64,
    pub unsupervised: f64,
    pub effective_gamma: f64,
}

fn unlabeled_example_weights(mixed: &MixedBatch, weights: &ClassWeights) -> Result<Vec<f64>> {
    if weights.len() != mixed.pseudo_labels.ncols() {
        return Err(Error::contract("unlabeled weights do not match class count"));
    }
    Ok(argmax_rows(&mixed.pseudo_labels)
        .into_iter()
        .map(|c| weights[c])
        .collect())
}

fn check_finite(loss: &CompoundLoss, step: u64) -> Result<()> {
    if loss.loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Training {
            step,
            message: format!(
                "non-finite loss (supervised {}, unsupervised {})",
                loss.supervised, loss.unsupervised
            ),
        })
    }
}

/// `L = L_l + γ·r(step)·L_u`. The unlabeled term weighs each example by its
/// pseudo-class weight.
pub fn compound_loss(
    params: &ModelParams,
    mixed: &MixedBatch,
    config: &MixMatchConfig,
    step: u64,
    weights: &LossWeights,
) -> Result<CompoundLoss> {
    Ok(compound_parts(params, mixed, config, step, weights, false)?.0)
}

/// [`compound_loss`] together with its gradient.
pub fn compound_loss_and_gradient(
    params: &ModelParams,
    mixed: &MixedBatch,
    config: &MixMatchConfig,
    step: u64,
    weights: &LossWeights,
) -> Result<(CompoundLoss, Gradients)> {
    let (loss, grads) = compound_parts(params, mixed, config, step, weights, true)?;
    Ok((loss, grads.expect("gradient requested")))
}

fn compound_parts(
    params: &ModelParams,
    mixed: &MixedBatch,
    config: &MixMatchConfig,
    step: u64,
    weights: &LossWeights,
    with_gradient: bool,
) -> Result<(CompoundLoss, Option<Gradients>)> {
    let effective_gamma = config.gamma * rampup(step, config.rampup_denominator);
    let example_weights = unlabeled_example_weights(mixed, &weights.unlabeled)?;
    let sup = Loss::SoftCrossEntropy {
        targets: &mixed.labeled.targets,
        weights: &weights.labeled,
    };
    let unsup = Loss::Euclidean {
        targets: &mixed.unlabeled.targets,
        example_weights: Some(&example_weights),
    };
    let trace_l = forward(params, &mixed.labeled.inputs)?;
    let trace_u = forward(params, &mixed.unlabeled.inputs)?;
    let supervised = sup.value(trace_l.probs())?;
    let unsupervised = unsup.value(trace_u.probs())?;
    let loss = CompoundLoss {
        loss: supervised + effective_gamma * unsupervised,
        supervised,
        unsupervised,
        effective_gamma,
    };
    check_finite(&loss, step)?;
    if !with_gradient {
        return Ok((loss, None));
    }
    let mut grads = backward(params, &trace_l, &mixed.labeled.inputs, &sup)?;
    let grads_u = backward(params, &trace_u, &mixed.unlabeled.inputs, &unsup)?;
    grads.add_scaled(&grads_u, effective_gamma);
    Ok((loss, Some(grads)))
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StepLog {
    pub step: u64,
    pub supervised: f64,
    pub unsupervised: f64,
    pub effective_gamma: f64,
    pub labeled_weights: Vec<f64>,
    pub unlabeled_weights: Vec<f64>,
}

impl StepLog {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("plain numeric record")
    }
}

/// Run one MixMatch update in place. `labeled_weights` are the class
/// weights of the supervised term; with PBC on, the unlabeled weights are
/// recomputed from this batch's pseudo-label argmaxes, otherwise uniform.
#[allow(clippy::too_many_arguments)]
pub fn mixmatch_step(
    params: &mut ModelParams,
    optim: &mut OptimState,
    labeled: &[GrayImage],
    labels: &[usize],
    unlabeled: &[GrayImage],
    config: &MixMatchConfig,
    labeled_weights: &ClassWeights,
    rng: &mut Rng,
) -> Result<StepLog> {
    let step = optim.step;
    let mixed = mix_match_batch(params, labeled, labels, unlabeled, config, rng)?;
    let num_classes = params.architecture().num_classes;
    let unlabeled_weights = if config.pbc_enabled {
        let pseudo = argmax_rows(&mixed.pseudo_labels);
        ClassWeights::inverse_frequency(&class_counts(&pseudo, num_classes))?
    } else {
        ClassWeights::uniform(num_classes)
    };
    let weights = LossWeights {
        labeled: labeled_weights.clone(),
        unlabeled: unlabeled_weights,
    };
    let (loss, grads) = compound_loss_and_gradient(params, &mixed, config, step, &weights)?;
    sgd_step_in_place(params, &grads, optim)?;
    Ok(StepLog {
        step,
        supervised: loss.supervised,
        unsupervised: loss.unsupervised,
        effective_gamma: loss.effective_gamma,
        labeled_weights: weights.labeled.into(),
        unlabeled_weights: weights.unlabeled.into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ClassifierConfig};
    use crate::rng::{stream, Stream};
    use approx::assert_abs_diff_eq;

    fn images(n: usize, offset: usize) -> Vec<GrayImage> {
        (0..n)
            .map(|k| GrayImage::from_fn(6, 6, |x, y| ((x * 5 + y * 3 + k * 7 + offset) % 11) as f64 / 10.0))
            .collect()
    }

    fn model() -> ModelParams {
        init_model(&ClassifierConfig {
            seed: 3,
            ..ClassifierConfig::mlp(6, 6, vec![5])
        })
        .unwrap()
    }

    #[test]
    fn sharpen_examples() {
        let q = sharpen(&[0.8, 0.2], 0.25).unwrap();
        let expected = 0.8f64.powi(4) / (0.8f64.powi(4) + 0.2f64.powi(4));
        assert_abs_diff_eq!(q[0], expected, epsilon = 1e-15);
        assert_abs_diff_eq!(q[0], 0.99611, epsilon = 1e-5);
        assert_abs_diff_eq!(q[1], 0.00389, epsilon = 1e-5);
        assert_eq!(sharpen(&[0.5, 0.5], 0.1).unwrap(), vec![0.5, 0.5]);
        let p = [0.3, 0.6, 0.1];
        for (a, b) in sharpen(&p, 1.0).unwrap().iter().zip(p) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        assert!(sharpen(&[0.0, 0.0], 0.5).is_err());
        assert!(sharpen(&[0.5, 0.5], 0.0).is_err());
    }

    #[test]
    fn sharpen_survives_tiny_probabilities() {
        let q = sharpen(&[1e-200, 1e-210], 0.25).unwrap();
        assert!(q.iter().all(|v| v.is_finite()));
        assert_abs_diff_eq!(q[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rampup_values() {
        assert_eq!(rampup(0, 3000.0), 0.0);
        assert_eq!(rampup(1500, 3000.0), 0.5);
        assert_eq!(rampup(6000, 3000.0), 1.0);
    }

    #[test]
    fn mixup_examples() {
        let a = (ndarray::arr1(&[1.0, 2.0]), ndarray::arr1(&[1.0, 0.0]));
        let b = (ndarray::arr1(&[3.0, 6.0]), ndarray::arr1(&[0.0, 1.0]));
        let (x, y) = mix_up((a.0.view(), a.1.view()), (b.0.view(), b.1.view()), 1.0).unwrap();
        assert_eq!((x, y), a.clone());
        let (x, _) = mix_up((a.0.view(), a.1.view()), (b.0.view(), b.1.view()), 0.5).unwrap();
        assert_eq!(x, ndarray::arr1(&[2.0, 4.0]));
        let (_, y) = mix_up((a.0.view(), a.1.view()), (b.0.view(), b.1.view()), 0.7).unwrap();
        assert_abs_diff_eq!(y[0], 0.7, epsilon = 1e-15);
        assert_abs_diff_eq!(y[1], 0.3, epsilon = 1e-15);
        let short = ndarray::arr1(&[1.0]);
        assert!(mix_up((short.view(), a.1.view()), (b.0.view(), b.1.view()), 0.7).is_err());
    }

    #[test]
    fn pbc_examples() {
        let (l, u) = pbc_weights(&[50, 50], &[95, 5]).unwrap();
        assert_eq!(l.as_slice(), &[1.0, 1.0]);
        assert_abs_diff_eq!(u[0], 100.0 / 190.0, epsilon = 1e-12);
        assert_abs_diff_eq!(u[1], 10.0, epsilon = 1e-12);
        let (_, empty) = pbc_weights(&[1, 1], &[40, 0]).unwrap();
        assert_eq!(empty.as_slice(), &[0.5, 20.0]);
    }

    #[test]
    fn degenerate_mixmatch_passes_batches_through() {
        let params = model();
        let config = MixMatchConfig {
            augment: AugmentConfig::identity(),
            fixed_lambda: Some(1.0),
            k: 1,
            temperature: 1.0,
            ..MixMatchConfig::default()
        };
        let (li, ui) = (images(3, 0), images(4, 1));
        let labels = [0, 1, 0];
        let mut rng = stream(1, Stream::Mix);
        let mixed = mix_match_batch(&params, &li, &labels, &ui, &config, &mut rng).unwrap();
        assert_eq!(mixed.labeled.inputs, standardize_batch(&li).unwrap());
        assert_eq!(mixed.labeled.targets, one_hot(&labels, 2).unwrap());
        let xu = standardize_batch(&ui).unwrap();
        assert_eq!(mixed.unlabeled.inputs, xu);
        let raw = predict_proba(&params, &xu).unwrap();
        for (a, b) in mixed.unlabeled.targets.iter().zip(raw.iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-15);
        }
    }

    #[test]
    fn mixed_labels_stay_stochastic_and_runs_repeat() {
        let params = model();
        let config = MixMatchConfig::default();
        let run = || {
            let mut rng = stream(9, Stream::Mix);
            mix_match_batch(&params, &images(5, 0), &[0, 0, 1, 0, 0], &images(5, 2), &config, &mut rng)
                .unwrap()
        };
        let a = run();
        assert_eq!(a, run());
        assert!((0.5..=1.0).contains(&a.lambda));
        for t in [&a.labeled.targets, &a.unlabeled.targets] {
            for row in t.rows() {
                assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-9);
            }
        }
        assert!(a.labeled.inputs.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_gamma_and_zero_step_drop_the_unsupervised_term() {
        let params = model();
        let mut rng = stream(2, Stream::Mix);
        let config = MixMatchConfig::default();
        let mixed =
            mix_match_batch(&params, &images(4, 0), &[0, 1, 0, 0], &images(4, 3), &config, &mut rng)
                .unwrap();
        let w = LossWeights::uniform(2);
        let at_zero = compound_loss(&params, &mixed, &config, 0, &w).unwrap();
        assert_eq!(at_zero.loss, at_zero.supervised);
        assert!(at_zero.unsupervised > 0.0);
        let no_gamma = MixMatchConfig { gamma: 0.0, ..config };
        let l = compound_loss(&params, &mixed, &no_gamma, 5000, &w).unwrap();
        assert_eq!(l.loss, l.supervised);
        let ramped = compound_loss(&params, &mixed, &config, 1500, &w).unwrap();
        assert_eq!(ramped.effective_gamma, 100.0);
        assert!(ramped.loss >= at_zero.loss);
    }

    #[test]
    fn step_log_uses_camel_case_keys() {
        let log = StepLog {
            step: 3,
            supervised: 0.5,
            unsupervised: 0.25,
            effective_gamma: 0.2,
            labeled_weights: vec![1.0, 1.0],
            unlabeled_weights: vec![0.5, 2.0],
        };
        let line = log.to_json_line();
        assert!(line.contains("\"effectiveGamma\":0.2"));
        assert!(line.contains("\"labeledWeights\""));
        assert!(!line.contains('\n'));
    }

    #[test]
    fn config_validation() {
        assert!(MixMatchConfig::default().validate().is_ok());
        for bad in [
            MixMatchConfig { k: 0, ..Default::default() },
            MixMatchConfig { temperature: 0.0, ..Default::default() },
            MixMatchConfig { alpha: -1.0, ..Default::default() },
            MixMatchConfig { fixed_lambda: Some(0.3), ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
