//! Semi-supervised mammogram classification at desk scale.
//!
//! The crate is organised around the stages of a small-data medical imaging
//! experiment:
//!
//! - [`model`]: a compact differentiable classifier with exact reverse-mode
//!   gradients, SGD with weight decay, and a versioned parameter format.
//! - [`metrics`]: confusion matrices and the imbalance-aware metrics
//!   (G-Mean, F-beta, balanced accuracy, ...), plus mean/std aggregation.
//! - [`preprocess`]: image ingestion, rolling-ball background estimation,
//!   Huang thresholding, binary morphology, standardization, augmentation and
//!   BI-RADS binarization.
//! - [`mixmatch`]: label guessing, sharpening, MixUp, the compound
//!   supervised/unsupervised loss with rampup, and pseudo-label based
//!   class-balance correction.
//! - [`dedims`]: feature-space dataset dissimilarity over random batches.
//! - [`stats`]: the Wilcoxon signed-rank test with an exact small-sample path.
//! - [`harness`]: manifests, patient-disjoint splits, label budgets, training
//!   loops, the four transfer/semi-supervised configurations and reporting.
//!
//! All randomness flows through explicitly seeded [`rand_chacha::ChaCha8Rng`]
//! streams, so every run is reproducible bit for bit.

pub mod dedims;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod mixmatch;
pub mod model;
pub mod preprocess;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
