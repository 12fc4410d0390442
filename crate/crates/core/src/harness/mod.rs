//! Experiment orchestration: manifests, splits, label budgets, training
//! loops, the four source/target configurations and report tables.

pub mod experiment;
pub mod manifest;
pub mod report;
pub mod split;
pub mod synth;
pub mod train;

pub use experiment::{
    pretrain, run_configuration, run_configuration_with, run_subset, run_suite, subset_seed, Configuration,
    Corpus, ExperimentConfig, PretrainCache, RunResult, SubsetOutcome,
};
pub use manifest::{Manifest, ManifestRecord, Side, View, MANIFEST_HEADER};
pub use report::{build_report, compare_against, compare_runs, emit_report, Comparison, ReportTable, SIGNIFICANCE_LEVEL};
pub use split::{
    budget_positives, holdout_validation, labeled_indices, patient_disjoint_split, sample_label_budget,
    LabelBudget, SplitSpec,
};
pub use synth::{generate_synthetic, write_corpus, SynthCorpus, SynthSpec};
pub use train::{
    evaluate, predict, pseudo_label_counts, train_ssdl, train_supervised, Dataset, EpochRecord,
    TrainOutcome, TrainSettings,
};
