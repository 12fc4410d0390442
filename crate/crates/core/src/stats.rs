//! Wilcoxon signed-rank test for paired samples.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Largest effective sample size handled by exact enumeration.
pub const EXACT_MAX_N: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    TwoSided,
    /// `a` tends to exceed `b`.
    Greater,
    Less,
}

impl fmt::Display for Alternative {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Alternative::TwoSided => "two-sided",
            Alternative::Greater => "greater",
            Alternative::Less => "less",
        })
    }
}

impl FromStr for Alternative {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-sided" => Ok(Alternative::TwoSided),
            "greater" => Ok(Alternative::Greater),
            "less" => Ok(Alternative::Less),
            other => Err(Error::config(format!(
                "unknown alternative '{other}' (expected two-sided, greater or less)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct WilcoxonResult {
    /// Sum of the ranks of positive differences.
    pub w_statistic: f64,
    pub p_value: f64,
    /// Pairs left after dropping zero differences.
    pub n_effective: usize,
    pub method: Method,
    pub alternative: Alternative,
}

/// Mid-ranks of `values` (1-based), doubled so they stay integral.
fn doubled_midranks(values: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end share rank (start+1+end)/2
        let doubled = (start + 1 + end) as u64;
        for &i in &order[start..end] {
            ranks[i] = doubled;
        }
        start = end;
    }
    ranks
}

/// Signed-rank test of `a − b`.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64], alternative: Alternative) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::contract(format!(
            "paired samples differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::contract("paired samples must be finite"));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.is_empty() {
        return Err(Error::data("degenerate sample: every difference is zero"));
    }
    let n = diffs.len();
    let magnitudes: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = doubled_midranks(&magnitudes);
    let w2: u64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let w_statistic = w2 as f64 / 2.0;

    let (p_greater, p_less, method) = if n <= EXACT_MAX_N {
        let (g, l) = exact_tails(&ranks, w2);
        (g, l, Method::Exact)
    } else {
        let (g, l) = normal_tails(&magnitudes, &ranks, w_statistic);
        (g, l, Method::NormalApprox)
    };
    let p_value = match alternative {
        Alternative::Greater => p_greater,
        Alternative::Less => p_less,
        Alternative::TwoSided => (2.0 * p_greater.min(p_less)).min(1.0),
    };
    Ok(WilcoxonResult {
        w_statistic,
        p_value,
        n_effective: n,
        method,
        alternative,
    })
}

/// `P(W ≥ w)` and `P(W ≤ w)` under random signs, by counting subsets of the
/// (doubled) ranks with each attainable sum.
fn exact_tails(ranks: &[u64], w2: u64) -> (f64, f64) {
    let max: u64 = ranks.iter().sum();
    let mut counts = vec![0u64; max as usize + 1];
    counts[0] = 1;
    let mut reach = 0usize;
    for &r in ranks {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] > 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let total = (1u64 << ranks.len()) as f64;
    let w = w2 as usize;
    let ge: u64 = counts[w..].iter().sum();
    let le: u64 = counts[..=w].iter().sum();
    (ge as f64 / total, le as f64 / total)
}

/// Normal approximation with tie-corrected variance and a continuity
/// correction of 0.5.
fn normal_tails(magnitudes: &[f64], ranks: &[u64], w: f64) -> (f64, f64) {
    let n = magnitudes.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut seen = std::collections::BTreeMap::new();
    for &r in ranks {
        *seen.entry(r).or_insert(0u64) += 1;
    }
    for &t in seen.values() {
        let t = t as f64;
        tie_term += t * t * t - t;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    let sd = var.sqrt();
    let normal = Normal::standard();
    let greater = 1.0 - normal.cdf((w - mean - 0.5) / sd);
    let less = normal.cdf((w - mean + 0.5) / sd);
    (greater.clamp(0.0, 1.0), less.clamp(0.0, 1.0))
}
