use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::manifest::Manifest;
use super::split::{
    holdout_validation, labeled_indices, patient_disjoint_split, sample_label_budget,
};
use super::train::{evaluate, train_ssdl, train_supervised, Dataset, TrainSettings};
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::mixmatch::MixMatchConfig;
use crate::model::{init_model, Activation, ClassifierConfig, ModelParams, OptimState};
use crate::preprocess::{AugmentConfig, BackgroundConfig, Fill, GrayImage, Pipeline};
use crate::rng::derive_seed;

/// The four ways of using (or not using) source data and unlabeled target data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
pub enum Configuration {
    /// Source-trained model applied to the target as is.
    #[serde(rename = "S+No-FT")]
    SourceNoFineTune,
    /// Source-trained model fine-tuned on the labeled target budget.
    #[serde(rename = "S+FT")]
    SourceFineTune,
    /// MixMatch from a fresh model.
    #[serde(rename = "SSDL")]
    Ssdl,
    /// MixMatch starting from the source-trained model.
    #[default]
    #[serde(rename = "SSDL+FT")]
    SsdlFineTune,
}

impl Configuration {
    pub const ALL: [Configuration; 4] = [
        Configuration::SourceNoFineTune,
        Configuration::SourceFineTune,
        Configuration::Ssdl,
        Configuration::SsdlFineTune,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Configuration::SourceNoFineTune => "S+No-FT",
            Configuration::SourceFineTune => "S+FT",
            Configuration::Ssdl => "SSDL",
            Configuration::SsdlFineTune => "SSDL+FT",
        }
    }

    pub fn needs_source(self) -> bool {
        self != Configuration::Ssdl
    }

    pub fn is_semi_supervised(self) -> bool {
        matches!(self, Configuration::Ssdl | Configuration::SsdlFineTune)
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Configuration {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Configuration::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown configuration '{s}' (expected S+No-FT, S+FT, SSDL or SSDL+FT)"
                ))
            })
    }
}

/// Every setting of an experiment as one flat key-value document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub configuration: Configuration,
    pub source_manifest: Option<PathBuf>,
    pub target_manifest: Option<PathBuf>,
    pub n_labeled: usize,
    pub negative_fraction: f64,
    pub seed: u64,
    pub subsets: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub train_fraction: f64,
    /// Share of the target training split held out for epoch selection.
    pub validation_fraction: f64,
    /// Select epochs on the test split instead of a held-out slice.
    pub select_on_test: bool,
    pub source_validation_fraction: f64,

    pub remove_background: bool,
    pub rolling_ball_radius: usize,
    pub mask_radius: usize,
    pub image_size: usize,

    pub conv_channels: usize,
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
    pub init_scale: f64,

    pub learning_rate: f64,
    pub weight_decay: f64,

    pub flip_prob: f64,
    pub max_rotation_deg: f64,
    pub fill: Fill,

    pub k: usize,
    pub temperature: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub rampup_denominator: f64,
    pub pbc_enabled: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let optim = OptimState::default();
        let augment = AugmentConfig::default();
        let mm = MixMatchConfig::default();
        let bg = BackgroundConfig::default();
        ExperimentConfig {
            configuration: Configuration::default(),
            source_manifest: None,
            target_manifest: None,
            n_labeled: 20,
            negative_fraction: 0.95,
            seed: 0,
            subsets: 10,
            epochs: 50,
            batch_size: 10,
            train_fraction: 0.7,
            validation_fraction: 0.15,
            select_on_test: false,
            source_validation_fraction: 0.15,
            remove_background: true,
            rolling_ball_radius: bg.rolling_ball_radius,
            mask_radius: bg.mask_radius,
            image_size: 224,
            conv_channels: 0,
            hidden_sizes: vec![64],
            activation: Activation::Tanh,
            init_scale: 1.0,
            learning_rate: optim.learning_rate,
            weight_decay: optim.weight_decay,
            flip_prob: augment.flip_prob,
            max_rotation_deg: augment.max_rotation_deg,
            fill: augment.fill,
            k: mm.k,
            temperature: mm.temperature,
            alpha: mm.alpha,
            gamma: mm.gamma,
            rampup_denominator: mm.rampup_denominator,
            pbc_enabled: mm.pbc_enabled,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::format(path, m),
            other => other,
        })?;
        // Manifest paths are relative to the config file.
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut config.source_manifest, &mut config.target_manifest]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn model(&self, seed: u64) -> ClassifierConfig {
        ClassifierConfig {
            input_height: self.image_size,
            input_width: self.image_size,
            hidden_sizes: self.hidden_sizes.clone(),
            num_classes: 2,
            init_scale: self.init_scale,
            seed,
            conv_channels: self.conv_channels,
            activation: self.activation,
        }
    }

    pub fn optim(&self) -> OptimState {
        OptimState {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            step: 0,
        }
    }

    pub fn augment(&self) -> AugmentConfig {
        AugmentConfig {
            flip_prob: self.flip_prob,
            max_rotation_deg: self.max_rotation_deg,
            fill: self.fill,
        }
    }

    pub fn mixmatch(&self) -> MixMatchConfig {
        MixMatchConfig {
            k: self.k,
            temperature: self.temperature,
            alpha: self.alpha,
            gamma: self.gamma,
            rampup_denominator: self.rampup_denominator,
            pbc_enabled: self.pbc_enabled,
            augment: self.augment(),
            fixed_lambda: None,
        }
    }

    pub fn pipeline(&self) -> Pipeline {
        Pipeline {
            remove_background: self.remove_background,
            background: BackgroundConfig {
                rolling_ball_radius: self.rolling_ball_radius,
                mask_radius: self.mask_radius,
            },
            width: self.image_size,
            height: self.image_size,
        }
    }

    fn settings(&self, seed: u64) -> TrainSettings {
        TrainSettings {
            epochs: self.epochs,
            batch_size: self.batch_size,
            optim: self.optim(),
            augment: self.augment(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.subsets == 0 {
            return Err(Error::config("subsets must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::config("flip_prob must lie in [0, 1]"));
        }
        if !(self.max_rotation_deg.is_finite() && self.max_rotation_deg >= 0.0) {
            return Err(Error::config("max_rotation_deg must be finite and nonnegative"));
        }
        if !(0.0..1.0).contains(&self.negative_fraction) {
            return Err(Error::config("negative_fraction must lie in [0, 1)"));
        }
        self.model(0).validate()?;
        self.settings(0).validate()?;
        self.mixmatch().validate()
    }
}

/// Preprocessed images aligned with their manifest records.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub manifest: Manifest,
    pub images: Vec<GrayImage>,
}

impl Corpus {
    pub fn new(manifest: Manifest, images: Vec<GrayImage>) -> Result<Self> {
        if manifest.len() != images.len() {
            return Err(Error::contract("one image per manifest record required"));
        }
        Ok(Corpus { manifest, images })
    }

    /// Run `pipeline` over raw images.
    pub fn preprocess(manifest: Manifest, raw: &[GrayImage], pipeline: &Pipeline) -> Result<Self> {
        let images = raw
            .iter()
            .map(|img| pipeline.run(img).map(|(out, _)| out))
            .collect::<Result<Vec<_>>>()?;
        Corpus::new(manifest, images)
    }

    /// Load every image a manifest lists and preprocess it.
    pub fn load(path: &Path, pipeline: &Pipeline) -> Result<Self> {
        let manifest = Manifest::load(path)?;
        let mut images = Vec::with_capacity(manifest.len());
        for r in &manifest.records {
            images.push(pipeline.run(&GrayImage::load(&manifest.resolve(r))?)?.0);
        }
        Corpus::new(manifest, images)
    }

    fn dataset(&self, pairs: &[(usize, usize)]) -> Dataset {
        Dataset {
            images: pairs.iter().map(|&(i, _)| self.images[i].clone()).collect(),
            labels: pairs.iter().map(|&(_, c)| c).collect(),
        }
    }
}

/// Results of one configuration over all data subsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub configuration: Configuration,
    pub n_labeled: usize,
    pub config: ExperimentConfig,
    pub subset_seeds: Vec<u64>,
    pub per_subset_reports: Vec<MetricReport>,
    pub best_epoch_per_subset: Vec<usize>,
}

impl RunResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(format!("invalid run result: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Source-trained models keyed by subset seed, shared between
/// configurations of a suite.
#[derive(Debug, Default)]
pub struct PretrainCache {
    models: BTreeMap<u64, ModelParams>,
}

impl PretrainCache {
    fn get_or_train(&mut self, config: &ExperimentConfig, source: &Corpus, seed: u64) -> Result<ModelParams> {
        if let Some(p) = self.models.get(&seed) {
            return Ok(p.clone());
        }
        let params = pretrain(config, source, seed)?;
        self.models.insert(seed, params.clone());
        Ok(params)
    }
}

/// Supervised training on the whole source corpus, selecting epochs on a
/// stratified hold-out.
pub fn pretrain(config: &ExperimentConfig, source: &Corpus, seed: u64) -> Result<ModelParams> {
    let pairs = labeled_indices(&source.manifest);
    let (train, val) = holdout_validation(&pairs, config.source_validation_fraction, derive_seed(seed, 10))?;
    let init = init_model(&config.model(derive_seed(seed, 11)))?;
    let outcome = train_supervised(
        &init,
        &source.dataset(&train),
        &source.dataset(&val),
        &config.settings(derive_seed(seed, 12)),
    )?;
    Ok(outcome.params)
}

/// Outcome of one configuration on one data subset.
#[derive(Debug, Clone)]
pub struct SubsetOutcome {
    pub report: MetricReport,
    pub best_epoch: usize,
    pub params: ModelParams,
}

/// Train and evaluate `configuration` on the subset drawn with `subset_seed`.
pub fn run_subset(
    config: &ExperimentConfig,
    configuration: Configuration,
    target: &Corpus,
    source: Option<&Corpus>,
    subset_seed: u64,
    cache: &mut PretrainCache,
) -> Result<SubsetOutcome> {
    let pretrained = match (configuration.needs_source(), source) {
        (true, Some(src)) => Some(cache.get_or_train(config, src, subset_seed)?),
        (true, None) => {
            return Err(Error::config(format!("{configuration} needs a source corpus")))
        }
        (false, _) => None,
    };
    let split = patient_disjoint_split(&target.manifest, config.train_fraction, subset_seed)?;
    let class_of: BTreeMap<usize, usize> = labeled_indices(&target.manifest).into_iter().collect();
    let with_class = |v: &[usize]| v.iter().map(|i| (*i, class_of[i])).collect::<Vec<_>>();
    let train_pairs = with_class(&split.train);
    let test_pairs = with_class(&split.test);
    let test = target.dataset(&test_pairs);

    if configuration == Configuration::SourceNoFineTune {
        let params = pretrained.expect("source configuration");
        return Ok(SubsetOutcome {
            report: evaluate(&params, &test)?,
            best_epoch: 0,
            params,
        });
    }

    let (pool, validation) = if config.select_on_test {
        (train_pairs, test.clone())
    } else {
        let (pool, held) = holdout_validation(&train_pairs, config.validation_fraction, subset_seed)?;
        (pool, target.dataset(&held))
    };
    let budget = sample_label_budget(&pool, config.n_labeled, config.negative_fraction, subset_seed)?;
    let labeled = target.dataset(&with_class(&budget.labeled));
    let unlabeled: Vec<GrayImage> = budget.unlabeled.iter().map(|&i| target.images[i].clone()).collect();
    let settings = config.settings(derive_seed(subset_seed, 20));
    let init = match pretrained {
        Some(p) => p,
        None => init_model(&config.model(derive_seed(subset_seed, 21)))?,
    };
    let outcome = if configuration.is_semi_supervised() {
        train_ssdl(&init, &labeled, &unlabeled, &validation, &settings, &config.mixmatch())?
    } else {
        train_supervised(&init, &labeled, &validation, &settings)?
    };
    Ok(SubsetOutcome {
        report: evaluate(&outcome.params, &test)?,
        best_epoch: outcome.best_epoch,
        params: outcome.params,
    })
}

/// Seed of the `i`-th data subset.
pub fn subset_seed(master: u64, i: usize) -> u64 {
    derive_seed(master, i as u64)
}

/// Run `config.configuration` over `config.subsets` subsets.
pub fn run_configuration(
    config: &ExperimentConfig,
    target: &Corpus,
    source: Option<&Corpus>,
    cache: &mut PretrainCache,
) -> Result<RunResult> {
    run_configuration_with(config, target, source, cache, |_, _| Ok(()))
}

/// Like [`run_configuration`], handing every subset's outcome to `visit`.
pub fn run_configuration_with(
    config: &ExperimentConfig,
    target: &Corpus,
    source: Option<&Corpus>,
    cache: &mut PretrainCache,
    mut visit: impl FnMut(usize, &SubsetOutcome) -> Result<()>,
) -> Result<RunResult> {
    config.validate()?;
    let mut result = RunResult {
        configuration: config.configuration,
        n_labeled: config.n_labeled,
        config: config.clone(),
        subset_seeds: Vec::with_capacity(config.subsets),
        per_subset_reports: Vec::with_capacity(config.subsets),
        best_epoch_per_subset: Vec::with_capacity(config.subsets),
    };
    for i in 0..config.subsets {
        let seed = subset_seed(config.seed, i);
        let outcome = run_subset(config, config.configuration, target, source, seed, cache)?;
        visit(i, &outcome)?;
        result.subset_seeds.push(seed);
        result.per_subset_reports.push(outcome.report);
        result.best_epoch_per_subset.push(outcome.best_epoch);
    }
    Ok(result)
}

/// Every requested configuration at every label budget, sharing pretrained
/// source models.
pub fn run_suite(
    base: &ExperimentConfig,
    configurations: &[Configuration],
    budgets: &[usize],
    target: &Corpus,
    source: Option<&Corpus>,
) -> Result<Vec<RunResult>> {
    let mut cache = PretrainCache::default();
    let mut out = Vec::new();
    for &n_labeled in budgets {
        for &configuration in configurations {
            let config = ExperimentConfig {
                configuration,
                n_labeled,
                ..base.clone()
            };
            out.push(run_configuration(&config, target, source, &mut cache)?);
        }
    }
    Ok(out)
}
