use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{confusion_from_predictions, MetricReport};
use crate::mixmatch::{class_counts, mixmatch_step, one_hot, MixMatchConfig, StepLog};
use crate::model::{
    argmax_rows, backward, forward, predict_proba, sgd_step_in_place, ClassWeights, Loss,
    ModelParams, OptimState,
};
use crate::preprocess::{augment, standardize_batch, AugmentConfig, GrayImage};
use crate::rng::{stream, Rng, Stream};

/// Images with class indices (0 negative, 1 positive).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub images: Vec<GrayImage>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(images: Vec<GrayImage>, labels: Vec<usize>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::contract("one label per image required"));
        }
        Ok(Dataset { images, labels })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn class_counts(&self, num_classes: usize) -> Vec<usize> {
        class_counts(&self.labels, num_classes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: OptimState,
    pub augment: AugmentConfig,
    pub seed: u64,
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        self.optim.validate()
    }

    pub fn steps_per_epoch(&self, n_labeled: usize) -> usize {
        n_labeled.div_ceil(self.batch_size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub validation_g_mean: f64,
    /// Predicted class counts over the unlabeled pool after this epoch
    /// (semi-supervised runs only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pseudo_counts: Option<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch.
    pub params: ModelParams,
    pub best_epoch: usize,
    pub best_score: f64,
    /// Parameters after the last epoch.
    pub final_params: ModelParams,
    pub history: Vec<EpochRecord>,
    pub steps: u64,
    pub step_log: Vec<StepLog>,
}

/// Class predictions for a whole set, standardized as one batch.
pub fn predict(params: &ModelParams, images: &[GrayImage]) -> Result<Vec<usize>> {
    let inputs = standardize_batch(images)?;
    Ok(argmax_rows(&predict_proba(params, &inputs)?))
}

/// Full metric report with class 1 as the positive class.
pub fn evaluate(params: &ModelParams, data: &Dataset) -> Result<MetricReport> {
    let predicted = predict(params, &data.images)?;
    let cm = confusion_from_predictions(&predicted, &data.labels, &1)?;
    MetricReport::from_confusion(&cm)
}

/// Predicted class counts over `images`.
pub fn pseudo_label_counts(params: &ModelParams, images: &[GrayImage]) -> Result<Vec<usize>> {
    let n = params.architecture().num_classes;
    Ok(class_counts(&predict(params, images)?, n))
}

fn check(labeled: &Dataset, validation: &Dataset, settings: &TrainSettings, params: &ModelParams) -> Result<ClassWeights> {
    settings.validate()?;
    if labeled.is_empty() {
        return Err(Error::contract("training needs labeled images"));
    }
    if validation.is_empty() {
        return Err(Error::contract("model selection needs validation images"));
    }
    let n = params.architecture().num_classes;
    if labeled.labels.iter().chain(&validation.labels).any(|&y| y >= n) {
        return Err(Error::contract("label out of range"));
    }
    ClassWeights::inverse_frequency(&labeled.class_counts(n))
}

/// Best-so-far tracker; ties keep the earlier epoch.
struct Selection {
    params: ModelParams,
    epoch: usize,
    score: f64,
}

impl Selection {
    fn offer(&mut self, params: &ModelParams, epoch: usize, score: f64) {
        if score > self.score {
            self.params = params.clone();
            self.epoch = epoch;
            self.score = score;
        }
    }
}

fn g_mean_on(params: &ModelParams, validation: &Dataset) -> Result<f64> {
    Ok(evaluate(params, validation)?.g_mean)
}

/// Supervised training with inverse-frequency class weights. After every
/// epoch the validation G-Mean is measured; the best epoch's parameters are
/// returned (epoch 0 is the initial model).
pub fn train_supervised(
    init: &ModelParams,
    labeled: &Dataset,
    validation: &Dataset,
    settings: &TrainSettings,
) -> Result<TrainOutcome> {
    let weights = check(labeled, validation, settings, init)?;
    let n_classes = init.architecture().num_classes;
    let mut params = init.clone();
    let mut optim = settings.optim;
    let mut order_rng = stream(settings.seed, Stream::LabeledOrder);
    let mut aug_rng = stream(settings.seed, Stream::LabeledAugment);
    let first = g_mean_on(&params, validation)?;
    let mut best = Selection {
        params: params.clone(),
        epoch: 0,
        score: first,
    };
    let mut history = vec![EpochRecord {
        epoch: 0,
        validation_g_mean: first,
        pseudo_counts: None,
    }];
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    for epoch in 1..=settings.epochs {
        order.shuffle(&mut order_rng);
        for chunk in order.chunks(settings.batch_size) {
            let imgs: Vec<GrayImage> = chunk
                .iter()
                .map(|&i| augment(&labeled.images[i], &settings.augment, &mut aug_rng))
                .collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| labeled.labels[i]).collect();
            supervised_step(&mut params, &mut optim, &imgs, &labels, n_classes, &weights)?;
        }
        let score = g_mean_on(&params, validation)?;
        best.offer(&params, epoch, score);
        history.push(EpochRecord {
            epoch,
            validation_g_mean: score,
            pseudo_counts: None,
        });
    }
    Ok(TrainOutcome {
        params: best.params,
        best_epoch: best.epoch,
        best_score: best.score,
        final_params: params,
        history,
        steps: optim.step,
        step_log: Vec::new(),
    })
}

fn supervised_step(
    params: &mut ModelParams,
    optim: &mut OptimState,
    images: &[GrayImage],
    labels: &[usize],
    n_classes: usize,
    weights: &ClassWeights,
) -> Result<()> {
    let x = standardize_batch(images)?;
    let y = one_hot(labels, n_classes)?;
    let trace = forward(params, &x)?;
    let loss = Loss::SoftCrossEntropy {
        targets: &y,
        weights,
    };
    let value = loss.value(trace.probs())?;
    if !value.is_finite() {
        return Err(Error::Training {
            step: optim.step,
            message: format!("non-finite supervised loss {value}"),
        });
    }
    let grads = backward(params, &trace, &x, &loss)?;
    sgd_step_in_place(params, &grads, optim)
}

/// Endless shuffled passes over an index range.
struct Cycler {
    order: Vec<usize>,
    pos: usize,
    rng: Rng,
}

impl Cycler {
    fn new(n: usize, rng: Rng) -> Self {
        Cycler {
            order: (0..n).collect(),
            pos: n,
            rng,
        }
    }

    fn take(&mut self, k: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// MixMatch training. Epochs follow the labeled set exactly as in
/// [`train_supervised`]; every labeled minibatch is paired with
/// `batch_size` unlabeled images drawn from repeated shuffles of the pool.
/// The optimizer's step counter drives the rampup.
pub fn train_ssdl(
    init: &ModelParams,
    labeled: &Dataset,
    unlabeled: &[GrayImage],
    validation: &Dataset,
    settings: &TrainSettings,
    mixmatch: &MixMatchConfig,
) -> Result<TrainOutcome> {
    let weights = check(labeled, validation, settings, init)?;
    mixmatch.validate()?;
    if unlabeled.is_empty() {
        return Err(Error::contract("semi-supervised training needs unlabeled images"));
    }
    let mut params = init.clone();
    let mut optim = settings.optim;
    let mut order_rng = stream(settings.seed, Stream::LabeledOrder);
    let mut mix_rng = stream(settings.seed, Stream::Mix);
    let mut pool = Cycler::new(unlabeled.len(), stream(settings.seed, Stream::UnlabeledOrder));
    let mixmatch = MixMatchConfig {
        augment: settings.augment,
        ..*mixmatch
    };
    let first = g_mean_on(&params, validation)?;
    let mut best = Selection {
        params: params.clone(),
        epoch: 0,
        score: first,
    };
    let mut history = vec![EpochRecord {
        epoch: 0,
        validation_g_mean: first,
        pseudo_counts: Some(pseudo_label_counts(&params, unlabeled)?),
    }];
    let mut step_log = Vec::new();
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    for epoch in 1..=settings.epochs {
        order.shuffle(&mut order_rng);
        for chunk in order.chunks(settings.batch_size) {
            let imgs: Vec<GrayImage> = chunk.iter().map(|&i| labeled.images[i].clone()).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| labeled.labels[i]).collect();
            let unl: Vec<GrayImage> = pool
                .take(settings.batch_size)
                .into_iter()
                .map(|i| unlabeled[i].clone())
                .collect();
            let log = mixmatch_step(
                &mut params,
                &mut optim,
                &imgs,
                &labels,
                &unl,
                &mixmatch,
                &weights,
                &mut mix_rng,
            )?;
            step_log.push(log);
        }
        let score = g_mean_on(&params, validation)?;
        best.offer(&params, epoch, score);
        history.push(EpochRecord {
            epoch,
            validation_g_mean: score,
            pseudo_counts: Some(pseudo_label_counts(&params, unlabeled)?),
        });
    }
    Ok(TrainOutcome {
        params: best.params,
        best_epoch: best.epoch,
        best_score: best.score,
        final_params: params,
        history,
        steps: optim.step,
        step_log,
    })
}
