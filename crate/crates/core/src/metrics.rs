//! Binary classification metrics for imbalanced data.
//!
//! Every metric derives from a [`ConfusionMatrix`]. Ratios whose denominator
//! is zero evaluate to 0 and are recorded in [`MetricReport::degenerate`], so
//! that runs with very few positives still aggregate cleanly.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        ConfusionMatrix { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn actual_positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn actual_negatives(&self) -> u64 {
        self.tn + self.fp
    }
}

/// Count outcomes, treating `positive` as the positive class and every other
/// label as negative.
pub fn confusion_from_predictions<L: PartialEq>(
    predicted: &[L],
    actual: &[L],
    positive: &L,
) -> Result<ConfusionMatrix> {
    if predicted.len() != actual.len() {
        return Err(Error::contract(format!(
            "{} predictions for {} labels",
            predicted.len(),
            actual.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::contract("no predictions to score"));
    }
    let mut cm = ConfusionMatrix::default();
    for (p, a) in predicted.iter().zip(actual) {
        match (p == positive, a == positive) {
            (true, true) => cm.tp += 1,
            (false, false) => cm.tn += 1,
            (true, false) => cm.fp += 1,
            (false, true) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

/// Metric names, used for flags, serialized records and lookups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    Recall,
    Specificity,
    Precision,
    F2,
    GMean,
    BalancedAccuracy,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::Accuracy,
        Metric::Recall,
        Metric::Specificity,
        Metric::Precision,
        Metric::F2,
        Metric::GMean,
        Metric::BalancedAccuracy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Recall => "recall",
            Metric::Specificity => "specificity",
            Metric::Precision => "precision",
            Metric::F2 => "f2",
            Metric::GMean => "g_mean",
            Metric::BalancedAccuracy => "balanced_accuracy",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::contract(format!("unknown metric {s:?}")))
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// `(TP + TN) / total`.
pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    ratio(cm.tp + cm.tn, cm.total()).ok_or_else(|| Error::contract("empty confusion matrix"))
}

/// `TP / (TP + FN)`, or 0 when there are no actual positives.
pub fn recall(cm: &ConfusionMatrix) -> f64 {
    ratio(cm.tp, cm.tp + cm.fn_).unwrap_or(0.0)
}

/// `TN / (TN + FP)`, or 0 when there are no actual negatives.
pub fn specificity(cm: &ConfusionMatrix) -> f64 {
    ratio(cm.tn, cm.tn + cm.fp).unwrap_or(0.0)
}

/// `TP / (TP + FP)`, or 0 when nothing was predicted positive.
pub fn precision(cm: &ConfusionMatrix) -> f64 {
    ratio(cm.tp, cm.tp + cm.fp).unwrap_or(0.0)
}

fn fbeta_parts(cm: &ConfusionMatrix, beta: f64) -> Option<f64> {
    let p = precision(cm);
    let r = recall(cm);
    let b2 = beta * beta;
    let den = b2 * p + r;
    (den > 0.0).then(|| (1.0 + b2) * p * r / den)
}

/// `(1+β²)·P·R / (β²·P + R)`; 0 when the denominator vanishes.
pub fn fbeta(cm: &ConfusionMatrix, beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::contract(format!("beta must be positive, got {beta}")));
    }
    Ok(fbeta_parts(cm, beta).unwrap_or(0.0))
}

/// Arithmetic mean of recall and specificity.
pub fn balanced_accuracy(cm: &ConfusionMatrix) -> f64 {
    (recall(cm) + specificity(cm)) / 2.0
}

/// Geometric mean of recall and specificity.
pub fn g_mean(cm: &ConfusionMatrix) -> f64 {
    (recall(cm) * specificity(cm)).sqrt()
}

/// All metrics of one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub recall: f64,
    pub specificity: f64,
    pub precision: f64,
    pub f2: f64,
    pub g_mean: f64,
    pub balanced_accuracy: f64,
    /// Metrics whose denominator was zero.
    #[serde(default)]
    pub degenerate: BTreeSet<Metric>,
}

impl MetricReport {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Result<Self> {
        let accuracy = accuracy(cm)?;
        let mut degenerate = BTreeSet::new();
        if cm.actual_positives() == 0 {
            degenerate.insert(Metric::Recall);
        }
        if cm.actual_negatives() == 0 {
            degenerate.insert(Metric::Specificity);
        }
        if cm.tp + cm.fp == 0 {
            degenerate.insert(Metric::Precision);
        }
        if fbeta_parts(cm, 2.0).is_none() {
            degenerate.insert(Metric::F2);
        }
        if degenerate.contains(&Metric::Recall) || degenerate.contains(&Metric::Specificity) {
            degenerate.insert(Metric::GMean);
            degenerate.insert(Metric::BalancedAccuracy);
        }
        Ok(MetricReport {
            accuracy,
            recall: recall(cm),
            specificity: specificity(cm),
            precision: precision(cm),
            f2: fbeta(cm, 2.0)?,
            g_mean: g_mean(cm),
            balanced_accuracy: balanced_accuracy(cm),
            degenerate,
        })
    }

    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Accuracy => self.accuracy,
            Metric::Recall => self.recall,
            Metric::Specificity => self.specificity,
            Metric::Precision => self.precision,
            Metric::F2 => self.f2,
            Metric::GMean => self.g_mean,
            Metric::BalancedAccuracy => self.balanced_accuracy,
        }
    }
}

/// Mean and sample (n−1) standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    /// Two-pass mean/std; a single value has std 0.
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::contract("cannot summarize an empty sequence"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Ok(Summary { mean, std })
    }
}

/// Per-metric mean/std across repeated runs, in [`Metric::ALL`] order.
pub fn aggregate(reports: &[MetricReport]) -> Result<Vec<(Metric, Summary)>> {
    if reports.is_empty() {
        return Err(Error::contract("cannot aggregate zero reports"));
    }
    Metric::ALL
        .into_iter()
        .map(|m| {
            let values: Vec<f64> = reports.iter().map(|r| r.get(m)).collect();
            Ok((m, Summary::of(&values)?))
        })
        .collect()
}

/// One flattened row of a metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub config: String,
    pub source: String,
    pub n_labels: usize,
    pub metric: Metric,
    pub mean: f64,
    pub std: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn perfect_predictions() {
        let cm = confusion_from_predictions(&[1, 0, 1], &[1, 0, 1], &1).unwrap();
        assert_eq!(cm, ConfusionMatrix::new(2, 1, 0, 0));
        let r = MetricReport::from_confusion(&cm).unwrap();
        for m in Metric::ALL {
            assert_eq!(r.get(m), 1.0, "{m}");
        }
        assert!(r.degenerate.is_empty());
    }

    #[test]
    fn all_negative_predictor_on_ninety_ten() {
        let actual: Vec<u8> = std::iter::repeat_n(0, 90).chain(std::iter::repeat_n(1, 10)).collect();
        let predicted = vec![0u8; 100];
        let cm = confusion_from_predictions(&predicted, &actual, &1).unwrap();
        assert_eq!(cm, ConfusionMatrix::new(0, 90, 0, 10));
        assert_abs_diff_eq!(accuracy(&cm).unwrap(), 0.90, epsilon = 1e-15);
        let r = MetricReport::from_confusion(&cm).unwrap();
        assert!(r.degenerate.contains(&Metric::Precision));
        assert!(r.degenerate.contains(&Metric::F2));
        assert_eq!(r.g_mean, 0.0);
    }

    #[test]
    fn direct_formula_examples() {
        let cm = ConfusionMatrix::new(3, 5, 1, 1);
        assert_abs_diff_eq!(accuracy(&cm).unwrap(), 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(recall(&ConfusionMatrix::new(1, 0, 0, 9)), 0.1);
        assert_eq!(specificity(&ConfusionMatrix::new(0, 90, 0, 0)), 1.0);
        let none = ConfusionMatrix::new(0, 4, 0, 2);
        assert_eq!(precision(&none), 0.0);
        assert!(MetricReport::from_confusion(&none)
            .unwrap()
            .degenerate
            .contains(&Metric::Precision));
    }

    #[test]
    fn fbeta_examples() {
        // P = 1/4, R = 3/4: tp=3, fp=9, fn=1.
        let cm = ConfusionMatrix::new(3, 0, 9, 1);
        assert_abs_diff_eq!(precision(&cm), 0.25);
        assert_abs_diff_eq!(recall(&cm), 0.75);
        let expected = 5.0 * 0.25 * 0.75 / (4.0 * 0.25 + 0.75);
        assert_abs_diff_eq!(fbeta(&cm, 2.0).unwrap(), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(expected, 0.5357, epsilon = 1e-4);
        // P = R = 1/2
        let cm = ConfusionMatrix::new(1, 0, 1, 1);
        assert_abs_diff_eq!(fbeta(&cm, 1.0).unwrap(), 0.5, epsilon = 1e-15);
        let perfect = ConfusionMatrix::new(4, 4, 0, 0);
        for beta in [0.5, 1.0, 2.0, 7.0] {
            assert_abs_diff_eq!(fbeta(&perfect, beta).unwrap(), 1.0, epsilon = 1e-15);
        }
        assert!(fbeta(&perfect, 0.0).is_err());
        assert!(fbeta(&perfect, -1.0).is_err());
    }

    #[test]
    fn balanced_accuracy_and_gmean() {
        let cm = ConfusionMatrix::new(1, 90, 0, 9);
        assert_abs_diff_eq!(balanced_accuracy(&cm), 0.55, epsilon = 1e-15);
        assert_abs_diff_eq!(g_mean(&cm), 0.1f64.sqrt(), epsilon = 1e-15);
        // printed as 0.31: two decimals, truncated
        assert_eq!((g_mean(&cm) * 100.0).floor() / 100.0, 0.31);
        // R = 0.5, S = 0.72
        let cm = ConfusionMatrix::new(5, 18, 7, 5);
        assert_abs_diff_eq!(balanced_accuracy(&cm), 0.61, epsilon = 1e-15);
        assert_abs_diff_eq!(g_mean(&cm), 0.6, epsilon = 1e-15);
    }

    #[test]
    fn aggregate_uses_sample_std() {
        let mk = |v: f64| MetricReport {
            accuracy: v,
            recall: v,
            specificity: v,
            precision: v,
            f2: v,
            g_mean: v,
            balanced_accuracy: v,
            degenerate: BTreeSet::new(),
        };
        let s = aggregate(&[mk(0.4), mk(0.6)]).unwrap();
        for (_, summary) in s {
            assert_abs_diff_eq!(summary.mean, 0.5, epsilon = 1e-15);
            assert_abs_diff_eq!(summary.std, 0.02f64.sqrt(), epsilon = 1e-15);
        }
        let same = aggregate(&[mk(0.3), mk(0.3), mk(0.3)]).unwrap();
        assert!(same.iter().all(|(_, s)| s.std == 0.0));
        assert_eq!(aggregate(&[mk(0.9)]).unwrap()[0].1.std, 0.0);
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn confusion_errors() {
        assert!(confusion_from_predictions::<u8>(&[], &[], &1).is_err());
        assert!(confusion_from_predictions(&[1], &[1, 0], &1).is_err());
        assert!(accuracy(&ConfusionMatrix::default()).is_err());
    }

    #[test]
    fn metric_names_parse() {
        for m in Metric::ALL {
            assert_eq!(m.name().parse::<Metric>().unwrap(), m);
        }
        assert_eq!(serde_json::to_string(&Metric::GMean).unwrap(), "\"g_mean\"");
    }
}
