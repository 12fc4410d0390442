//! Command-line front end: synthetic data, preprocessing, splits, training,
//! evaluation, dataset dissimilarity, paired tests and reports.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mammo_core::dedims::{dedims, pixel_statistics, DedimsConfig, Normalization, PenultimateFeatures};
use mammo_core::harness::{
    compare_against, compare_runs, emit_report, evaluate, generate_synthetic, patient_disjoint_split,
    run_configuration_with, write_corpus, Configuration, Corpus, Dataset, ExperimentConfig, Manifest, PretrainCache,
    RunResult, SynthSpec,
};
use mammo_core::metrics::Metric;
use mammo_core::model::{init_model, load_params, save_params, Activation, ClassifierConfig, ModelParams};
use mammo_core::preprocess::{BackgroundConfig, GrayImage, Pipeline};
use mammo_core::rng::{stream, Stream};
use mammo_core::stats::Alternative;

#[derive(Parser)]
#[command(name = "mammo", version, about = "Semi-supervised mammogram classification at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic mammogram corpus with its manifest.
    Synth(SynthArgs),
    /// Remove background and resize every image of a manifest.
    Preprocess(PreprocessArgs),
    /// Patient-disjoint train/test split of a manifest.
    Split(SplitArgs),
    /// Run one configuration over all subsets from a config file.
    Train(TrainArgs),
    /// Score a parameter file on a manifest.
    Eval(EvalArgs),
    /// Feature-space dissimilarity between two manifests.
    Dedims(DedimsArgs),
    /// Wilcoxon signed-rank test between two result files.
    Compare(CompareArgs),
    /// Mean/std table with paired tests from result files.
    Report(ReportArgs),
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long, default_value_t = 5)]
    rolling_ball_radius: usize,
    #[arg(long, default_value_t = 1)]
    mask_radius: usize,
    #[arg(long)]
    skip_background_removal: bool,
    /// Output side length in pixels.
    #[arg(long)]
    size: Option<usize>,
}

impl PipelineArgs {
    fn pipeline(&self, default_size: usize) -> Pipeline {
        let size = self.size.unwrap_or(default_size);
        Pipeline {
            remove_background: !self.skip_background_removal,
            background: BackgroundConfig {
                rolling_ball_radius: self.rolling_ball_radius,
                mask_radius: self.mask_radius,
            },
            width: size,
            height: size,
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 87)]
    patients: usize,
    #[arg(long, default_value_t = 3)]
    images_per_patient: usize,
    #[arg(long, default_value_t = 0.05)]
    positive_rate: f64,
    /// 0 is the reference domain; larger values drift further.
    #[arg(long, default_value_t = 0.0)]
    shift: f64,
    #[arg(long, default_value_t = 32)]
    size: usize,
    /// Draw text-like tags next to the breast.
    #[arg(long)]
    tags: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PreprocessArgs {
    /// Directory the manifest's image paths are relative to.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 0.7)]
    train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Master seed, overriding the config file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    configuration: Option<Configuration>,
    #[arg(long)]
    n_labeled: Option<usize>,
    /// Result file; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Save the selected parameters of every subset here.
    #[arg(long)]
    params_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Take preprocessing settings from this experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DedimsArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value_t = 10)]
    batches: usize,
    #[arg(long, default_value_t = 40)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Compare feature columns in batch order instead of sorted.
    #[arg(long)]
    raw_order: bool,
    /// Feature extractor; a seeded random network when absent.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Hidden width of the random network.
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    /// Standardize each batch on its own statistics instead of the first
    /// dataset's pixel statistics.
    #[arg(long)]
    batch_normalization: bool,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value = "g_mean")]
    metric: Metric,
    #[arg(long, default_value = "two-sided")]
    alternative: Alternative,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// RunResult files.
    #[arg(long, num_args = 1.., required = true)]
    results: Vec<PathBuf>,
    /// CSV path; the JSON twin is written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Configuration tested against every other one.
    #[arg(long, default_value = "SSDL+FT")]
    focus: Configuration,
    #[arg(long, default_value = "two-sided")]
    alternative: Alternative,
    /// Metrics to tabulate; all when absent.
    #[arg(long, value_delimiter = ',')]
    metrics: Vec<Metric>,
}

fn write_or_print(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => match writeln!(std::io::stdout().lock(), "{text}") {
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
            r => r.context("writing to stdout"),
        },
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)?)
}

fn synth(args: &SynthArgs) -> Result<()> {
    let corpus = generate_synthetic(&SynthSpec {
        n_patients: args.patients,
        images_per_patient: args.images_per_patient,
        positive_rate: args.positive_rate,
        domain_shift: args.shift,
        tag_artifacts: args.tags,
        size: args.size,
        seed: args.seed,
    })?;
    write_corpus(&corpus, &args.out)?;
    let (neg, pos, excluded) = corpus.manifest.label_counts();
    eprintln!(
        "wrote {} images to {} ({neg} negative, {pos} positive, {excluded} excluded)",
        corpus.images.len(),
        args.out.display()
    );
    Ok(())
}

fn preprocess(args: &PreprocessArgs) -> Result<()> {
    let mut manifest = Manifest::load(&args.manifest)?;
    manifest.root = args.input.clone();
    let pipeline = args.pipeline.pipeline(224);
    let mut provenance = BTreeMap::new();
    for record in &manifest.records {
        let img = GrayImage::load(&manifest.resolve(record))?;
        let (out, prov) = pipeline.run(&img)?;
        let dest = args.out.join(&record.image_path);
        if let Some(dir) = dest.parent() {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        out.save(&dest)?;
        provenance.insert(record.image_path.clone(), prov);
    }
    manifest.root = args.out.clone();
    manifest.save(&args.out.join("manifest.csv"))?;
    write_or_print(&to_json(&provenance)?, Some(&args.out.join("provenance.json")))?;
    eprintln!("preprocessed {} images into {}", manifest.len(), args.out.display());
    Ok(())
}

fn split(args: &SplitArgs) -> Result<()> {
    let manifest = Manifest::load(&args.manifest)?;
    let spec = patient_disjoint_split(&manifest, args.train_fraction, args.seed)?;
    write_or_print(&to_json(&spec)?, args.out.as_deref())
}

fn load_corpus(path: Option<&Path>, pipeline: &Pipeline, what: &str) -> Result<Option<Corpus>> {
    path.map(|p| Corpus::load(p, pipeline).with_context(|| format!("loading the {what} corpus from {}", p.display())))
        .transpose()
}

fn train(args: &TrainArgs) -> Result<()> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(c) = args.configuration {
        config.configuration = c;
    }
    if let Some(n) = args.n_labeled {
        config.n_labeled = n;
    }
    config.validate()?;
    let pipeline = config.pipeline();
    let Some(target) = load_corpus(config.target_manifest.as_deref(), &pipeline, "target")? else {
        bail!("the config names no target_manifest");
    };
    let source = if config.configuration.needs_source() {
        load_corpus(config.source_manifest.as_deref(), &pipeline, "source")?
    } else {
        None
    };
    if let Some(dir) = &args.params_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let result = run_configuration_with(
        &config,
        &target,
        source.as_ref(),
        &mut PretrainCache::default(),
        |i, outcome| {
            eprintln!(
                "subset {i}: g_mean {:.4}, best epoch {}",
                outcome.report.g_mean, outcome.best_epoch
            );
            match &args.params_dir {
                Some(dir) => save_params(&outcome.params, &dir.join(format!("subset_{i}.mmp"))),
                None => Ok(()),
            }
        },
    )?;
    write_or_print(&result.to_json(), args.out.as_deref())
}

fn eval(args: &EvalArgs) -> Result<()> {
    let params = load_params(&args.params)?;
    let pipeline = match &args.config {
        Some(path) => ExperimentConfig::load(path)?.pipeline(),
        None => args.pipeline.pipeline(params.architecture().input_width),
    };
    let corpus = Corpus::load(&args.manifest, &pipeline)?;
    let mut data = Dataset::default();
    for (record, image) in corpus.manifest.records.iter().zip(corpus.images) {
        if let Some(class) = record.binary_label().class_index() {
            data.images.push(image);
            data.labels.push(class);
        }
    }
    if data.is_empty() {
        bail!("{} has no binary-labeled images", args.manifest.display());
    }
    write_or_print(&to_json(&evaluate(&params, &data)?)?, args.out.as_deref())
}

fn feature_net(args: &DedimsArgs, size: usize) -> Result<ModelParams> {
    match &args.params {
        Some(path) => Ok(load_params(path)?),
        None => {
            let mut c = ClassifierConfig::mlp(size, size, vec![args.hidden]);
            c.activation = Activation::Relu;
            c.seed = args.seed;
            Ok(init_model(&c)?)
        }
    }
}

fn dissimilarity(args: &DedimsArgs) -> Result<()> {
    let size = match &args.params {
        Some(path) => load_params(path)?.architecture().input_width,
        None => args.pipeline.size.unwrap_or(32),
    };
    let pipeline = args.pipeline.pipeline(size);
    let a = Corpus::load(&args.a, &pipeline)?;
    let b = Corpus::load(&args.b, &pipeline)?;
    let normalization = if args.batch_normalization {
        Normalization::Batch
    } else {
        let (mean, std) = pixel_statistics(&a.images)?;
        Normalization::Fixed { mean, std }
    };
    let features = PenultimateFeatures {
        params: feature_net(args, size)?,
        normalization,
    };
    let config = DedimsConfig {
        batches: args.batches,
        batch_size: args.batch_size,
        raw_order: args.raw_order,
    };
    let report = dedims(&features, &a.images, &b.images, &config, &mut stream(args.seed, Stream::Dedims))?;
    write_or_print(&to_json(&report)?, args.out.as_deref())
}

fn compare(args: &CompareArgs) -> Result<()> {
    let a = RunResult::load(&args.a)?;
    let b = RunResult::load(&args.b)?;
    let cmp = compare_runs(&a, &b, args.metric, args.alternative)?;
    match cmp.test {
        Some(test) => write_or_print(&to_json(&test)?, args.out.as_deref()),
        None => bail!("every paired difference is zero; the test is undefined"),
    }
}

fn report(args: &ReportArgs) -> Result<()> {
    let results = args
        .results
        .iter()
        .map(|p| RunResult::load(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let metrics = if args.metrics.is_empty() { Metric::ALL.to_vec() } else { args.metrics.clone() };
    let comparisons = compare_against(&results, args.focus, &metrics, args.alternative)?;
    let table = emit_report(&results, &comparisons, &metrics, &args.out)?;
    eprintln!("wrote {} rows to {}", table.rows.len(), args.out.display());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Synth(a) => synth(&a),
        Command::Preprocess(a) => preprocess(&a),
        Command::Split(a) => split(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
        Command::Dedims(a) => dissimilarity(&a),
        Command::Compare(a) => compare(&a),
        Command::Report(a) => report(&a),
    }
}
