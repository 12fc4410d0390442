use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::experiment::{Configuration, RunResult};
use crate::error::{Error, Result};
use crate::metrics::{Metric, Summary};
use crate::stats::{wilcoxon_signed_rank, Alternative, WilcoxonResult};

/// Differences with p below this are marked significant.
pub const SIGNIFICANCE_LEVEL: f64 = 0.1;

/// Paired test of one configuration against another on one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Comparison {
    pub n_labeled: usize,
    pub metric: Metric,
    pub configuration: Configuration,
    pub baseline: Configuration,
    pub alternative: Alternative,
    /// `None` when every paired difference is zero.
    pub test: Option<WilcoxonResult>,
}

impl Comparison {
    pub fn p_value(&self) -> Option<f64> {
        self.test.as_ref().map(|t| t.p_value)
    }

    pub fn significant(&self) -> bool {
        self.p_value().is_some_and(|p| p < SIGNIFICANCE_LEVEL)
    }

    fn label(&self) -> String {
        let op = match self.alternative {
            Alternative::Greater => ">",
            Alternative::Less => "<",
            Alternative::TwoSided => "vs",
        };
        format!("{} {op} {}", self.configuration, self.baseline)
    }
}

/// Wilcoxon signed-rank test of `run` against `baseline` over their paired
/// subsets.
pub fn compare_runs(run: &RunResult, baseline: &RunResult, metric: Metric, alternative: Alternative) -> Result<Comparison> {
    if run.n_labeled != baseline.n_labeled {
        return Err(Error::contract("comparisons need runs with the same label budget"));
    }
    if run.subset_seeds != baseline.subset_seeds {
        return Err(Error::contract("comparisons need runs over the same subsets"));
    }
    let values = |r: &RunResult| r.per_subset_reports.iter().map(|m| m.get(metric)).collect::<Vec<_>>();
    let test = match wilcoxon_signed_rank(&values(run), &values(baseline), alternative) {
        Ok(t) => Some(t),
        Err(Error::Data(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(Comparison {
        n_labeled: run.n_labeled,
        metric,
        configuration: run.configuration,
        baseline: baseline.configuration,
        alternative,
        test,
    })
}

/// Tests of `focus` against every other configuration at every label budget.
pub fn compare_against(
    results: &[RunResult],
    focus: Configuration,
    metrics: &[Metric],
    alternative: Alternative,
) -> Result<Vec<Comparison>> {
    let mut out = Vec::new();
    for run in results.iter().filter(|r| r.configuration == focus) {
        for other in results
            .iter()
            .filter(|r| r.n_labeled == run.n_labeled && r.configuration != focus)
        {
            for &metric in metrics {
                out.push(compare_runs(run, other, metric, alternative)?);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Cell {
    pub configuration: Configuration,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TestCell {
    pub comparison: String,
    pub p_value: Option<f64>,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ReportRow {
    pub n_labeled: usize,
    pub metric: Metric,
    pub cells: Vec<Option<Cell>>,
    pub tests: Vec<Option<TestCell>>,
}

/// Mean and standard deviation per configuration, one row per
/// (label budget, metric), with one p-value column per compared pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ReportTable {
    pub configurations: Vec<Configuration>,
    pub comparisons: Vec<String>,
    pub rows: Vec<ReportRow>,
}

/// Build the table for `metrics` (every metric when empty).
pub fn build_report(results: &[RunResult], comparisons: &[Comparison], metrics: &[Metric]) -> Result<ReportTable> {
    if results.is_empty() {
        return Err(Error::contract("a report needs at least one run"));
    }
    let metrics = if metrics.is_empty() { &Metric::ALL[..] } else { metrics };
    let configurations: Vec<Configuration> = results
        .iter()
        .map(|r| r.configuration)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut labels = Vec::new();
    for c in comparisons {
        let l = c.label();
        if !labels.contains(&l) {
            labels.push(l);
        }
    }
    let budgets: BTreeSet<usize> = results.iter().map(|r| r.n_labeled).collect();
    let mut rows = Vec::new();
    for &n in &budgets {
        for &metric in metrics {
            let mut cells = Vec::with_capacity(configurations.len());
            for &c in &configurations {
                let cell = match results.iter().find(|r| r.n_labeled == n && r.configuration == c) {
                    Some(r) => {
                        let values: Vec<f64> = r.per_subset_reports.iter().map(|m| m.get(metric)).collect();
                        let s = Summary::of(&values)?;
                        Some(Cell {
                            configuration: c,
                            mean: s.mean,
                            std: s.std,
                        })
                    }
                    None => None,
                };
                cells.push(cell);
            }
            let tests = labels
                .iter()
                .map(|l| {
                    comparisons
                        .iter()
                        .find(|c| c.n_labeled == n && c.metric == metric && &c.label() == l)
                        .map(|c| TestCell {
                            comparison: l.clone(),
                            p_value: c.p_value(),
                            significant: c.significant(),
                        })
                })
                .collect();
            rows.push(ReportRow {
                n_labeled: n,
                metric,
                cells,
                tests,
            });
        }
    }
    Ok(ReportTable {
        configurations,
        comparisons: labels,
        rows,
    })
}

fn fixed(v: f64) -> String {
    format!("{v:.6}")
}

impl ReportTable {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["n_labeled".to_string(), "metric".to_string()];
        for c in &self.configurations {
            header.push(format!("{c} mean"));
            header.push(format!("{c} std"));
        }
        for l in &self.comparisons {
            header.push(format!("p({l})"));
            header.push(format!("sig({l})"));
        }
        w.write_record(&header).expect("in-memory write");
        for row in &self.rows {
            let mut rec = vec![row.n_labeled.to_string(), row.metric.name().to_string()];
            for cell in &row.cells {
                match cell {
                    Some(c) => rec.extend([fixed(c.mean), fixed(c.std)]),
                    None => rec.extend([String::new(), String::new()]),
                }
            }
            for t in &row.tests {
                match t {
                    Some(t) => {
                        rec.push(t.p_value.map(fixed).unwrap_or_default());
                        rec.push(if t.significant { "*".into() } else { String::new() });
                    }
                    None => rec.extend([String::new(), String::new()]),
                }
            }
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }
}

/// Write the table as CSV to `path` and as JSON next to it.
pub fn emit_report(results: &[RunResult], comparisons: &[Comparison], metrics: &[Metric], path: &Path) -> Result<ReportTable> {
    let table = build_report(results, comparisons, metrics)?;
    std::fs::write(path, table.to_csv()).map_err(|e| Error::io(path, e))?;
    let json = path.with_extension("json");
    std::fs::write(&json, table.to_json()).map_err(|e| Error::io(&json, e))?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::experiment::ExperimentConfig;
    use crate::metrics::{ConfusionMatrix, MetricReport};

    fn run(configuration: Configuration, g: &[(u64, u64)]) -> RunResult {
        let reports: Vec<MetricReport> = g
            .iter()
            .map(|&(tp, tn)| {
                MetricReport::from_confusion(&ConfusionMatrix {
                    tp,
                    tn,
                    fp: 10 - tn,
                    fn_: 10 - tp,
                })
                .unwrap()
            })
            .collect();
        RunResult {
            configuration,
            n_labeled: 20,
            config: ExperimentConfig::default(),
            subset_seeds: (0..g.len() as u64).collect(),
            best_epoch_per_subset: vec![0; g.len()],
            per_subset_reports: reports,
        }
    }

    #[test]
    fn single_run_gives_one_row() {
        let r = run(Configuration::Ssdl, &[(5, 9)]);
        let t = build_report(&[r], &[], &[Metric::GMean]).unwrap();
        assert_eq!(t.rows.len(), 1);
        let csv = t.to_csv();
        assert_eq!(csv.lines().count(), 2);
        assert_eq!(csv.lines().next().unwrap(), "n_labeled,metric,SSDL mean,SSDL std");
    }

    #[test]
    fn significance_follows_the_threshold() {
        let c = |p| Comparison {
            n_labeled: 20,
            metric: Metric::GMean,
            configuration: Configuration::SsdlFineTune,
            baseline: Configuration::SourceFineTune,
            alternative: Alternative::Greater,
            test: Some(WilcoxonResult {
                w_statistic: 0.0,
                p_value: p,
                n_effective: 10,
                method: crate::stats::Method::Exact,
                alternative: Alternative::Greater,
            }),
        };
        assert!(c(0.04).significant());
        assert!(!c(0.1).significant());
        let a = run(Configuration::SsdlFineTune, &[(8, 9), (7, 9)]);
        let b = run(Configuration::SourceFineTune, &[(5, 9), (4, 9)]);
        let csv = build_report(&[a, b], &[c(0.04)], &[Metric::GMean]).unwrap().to_csv();
        assert!(csv.lines().nth(1).unwrap().ends_with(",0.040000,*"), "{csv}");
    }

    #[test]
    fn paired_comparison_runs_wilcoxon() {
        let a = run(Configuration::SsdlFineTune, &[(8, 9), (7, 9), (9, 8), (6, 9), (8, 8)]);
        let b = run(Configuration::SourceFineTune, &[(5, 9), (4, 9), (5, 8), (3, 9), (5, 8)]);
        let cmp = compare_runs(&a, &b, Metric::GMean, Alternative::Greater).unwrap();
        // all five differences positive: p = 1/32
        assert!((cmp.p_value().unwrap() - 1.0 / 32.0).abs() < 1e-12);
        let same = compare_runs(&a, &a, Metric::GMean, Alternative::Greater).unwrap();
        assert!(same.test.is_none() && !same.significant());
    }

    #[test]
    fn reemitting_from_json_is_byte_identical() {
        let a = run(Configuration::SsdlFineTune, &[(8, 9), (7, 9), (9, 8)]);
        let b = run(Configuration::Ssdl, &[(5, 9), (7, 7), (5, 8)]);
        let cmp = compare_against(&[a.clone(), b.clone()], Configuration::SsdlFineTune, &Metric::ALL, Alternative::TwoSided).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("r1.csv");
        emit_report(&[a.clone(), b.clone()], &cmp, &[], &p1).unwrap();
        let a2 = RunResult::from_json(&a.to_json()).unwrap();
        let b2 = RunResult::from_json(&b.to_json()).unwrap();
        let p2 = dir.path().join("r2.csv");
        emit_report(&[a2, b2], &cmp, &[], &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert!(dir.path().join("r1.json").exists());
    }
}
