//! Evaluation reports: per-(dataset, τ, variant) metric summaries over
//! repeated runs, written as CSV and nested JSON.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{aggregate_runs, pearson_corr};

pub const METRIC_FTD: &str = "ftd";
pub const METRIC_MAE: &str = "predictive_mae";
/// Row name of the FTD↔MAE correlation in CSV output.
pub const METRIC_CORRELATION: &str = "pearson_ftd_mae";

pub const CSV_HEADER: &str = "dataset,tau,variant,metric,mean,std,n_runs";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    pub n_runs: usize,
    pub runs: Vec<f64>,
}

impl MetricSummary {
    pub fn from_runs(runs: &[f64]) -> Result<Self> {
        let (mean, std) = aggregate_runs(runs)?;
        Ok(MetricSummary {
            mean,
            std,
            n_runs: runs.len(),
            runs: runs.to_vec(),
        })
    }
}

type Cell = BTreeMap<String, MetricSummary>;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// dataset → τ → variant → metric → summary.
    pub cells: BTreeMap<String, BTreeMap<usize, BTreeMap<String, Cell>>>,
    /// Pearson r between mean FTD and mean MAE across cells holding both.
    pub correlation: Option<f64>,
}

impl EvalReport {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records the per-run scores of one metric in one cell, replacing any
    /// earlier entry.
    pub fn add(&mut self, dataset: &str, tau: usize, variant: &str, metric: &str, runs: &[f64]) -> Result<()> {
        if runs.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract(format!("non-finite {metric} score in {dataset}/{tau}/{variant}")));
        }
        let summary = MetricSummary::from_runs(runs)?;
        self.cells
            .entry(dataset.to_string())
            .or_default()
            .entry(tau)
            .or_default()
            .entry(variant.to_string())
            .or_default()
            .insert(metric.to_string(), summary);
        Ok(())
    }

    pub fn get(&self, dataset: &str, tau: usize, variant: &str, metric: &str) -> Option<&MetricSummary> {
        self.cells.get(dataset)?.get(&tau)?.get(variant)?.get(metric)
    }

    fn rows(&self) -> impl Iterator<Item = (&str, usize, &str, &str, &MetricSummary)> {
        self.cells.iter().flat_map(|(d, taus)| {
            taus.iter().flat_map(move |(t, variants)| {
                variants.iter().flat_map(move |(v, metrics)| {
                    metrics.iter().map(move |(m, s)| (d.as_str(), *t, v.as_str(), m.as_str(), s))
                })
            })
        })
    }

    /// Number of (dataset, τ, variant) cells.
    pub fn len(&self) -> usize {
        self.cells.values().flat_map(|t| t.values()).map(|v| v.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Computes and stores the FTD↔MAE correlation across cells that hold
    /// both metrics.
    pub fn compute_correlation(&mut self) -> Result<f64> {
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for variants in self.cells.values().flat_map(|t| t.values()) {
            for metrics in variants.values() {
                if let (Some(f), Some(m)) = (metrics.get(METRIC_FTD), metrics.get(METRIC_MAE)) {
                    xs.push(f.mean);
                    ys.push(m.mean);
                }
            }
        }
        let r = pearson_corr(&xs, &ys)?;
        self.correlation = Some(r);
        Ok(r)
    }

    /// One row per (cell, metric); the correlation, when present, is a final
    /// row with `*` in the key columns.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for (d, t, v, m, sum) in self.rows() {
            s.push_str(&format!("{d},{t},{v},{m},{},{},{}\n", sum.mean, sum.std, sum.n_runs));
        }
        if let Some(r) = self.correlation {
            let cells = self.len();
            s.push_str(&format!("*,*,*,{METRIC_CORRELATION},{r},0,{cells}\n"));
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let json = dir.join(format!("{stem}.json"));
        std::fs::write(&json, self.to_json()).map_err(|e| Error::io(&json, e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EvalReport {
        let mut r = EvalReport::new();
        r.add("toy", 16, "full", METRIC_FTD, &[1.0, 3.0]).unwrap();
        r.add("toy", 16, "full", METRIC_MAE, &[0.1, 0.1]).unwrap();
        r.add("toy", 16, "no_spatial", METRIC_FTD, &[4.0]).unwrap();
        r.add("toy", 16, "no_spatial", METRIC_MAE, &[0.3]).unwrap();
        r.add("toy", 64, "full", METRIC_FTD, &[3.0]).unwrap();
        r.add("toy", 64, "full", METRIC_MAE, &[0.2]).unwrap();
        r
    }

    #[test]
    fn summaries_use_population_std() {
        let r = sample();
        let s = r.get("toy", 16, "full", METRIC_FTD).unwrap();
        assert_eq!((s.mean, s.std, s.n_runs), (2.0, 1.0, 2));
        assert_eq!(r.len(), 3);
        assert!(r.clone().add("toy", 16, "full", METRIC_FTD, &[]).is_err());
        assert!(r.clone().add("toy", 16, "full", METRIC_FTD, &[f64::NAN]).is_err());
    }

    #[test]
    fn csv_layout() {
        let mut r = sample();
        let corr = r.compute_correlation().unwrap();
        assert!((corr - 1.0).abs() < 1e-12);
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "toy,16,full,ftd,2,1,2");
        assert_eq!(lines.len(), 1 + 6 + 1);
        assert!(lines[7].starts_with("*,*,*,pearson_ftd_mae,"));
    }

    #[test]
    fn json_nests_by_dataset_tau_variant() {
        let r = sample();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["cells"]["toy"]["64"]["full"]["ftd"]["mean"], 3.0);
        let back: EvalReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn correlation_needs_two_cells() {
        let mut r = EvalReport::new();
        r.add("toy", 16, "full", METRIC_FTD, &[1.0]).unwrap();
        r.add("toy", 16, "full", METRIC_MAE, &[1.0]).unwrap();
        assert!(r.compute_correlation().is_err());
    }
}
