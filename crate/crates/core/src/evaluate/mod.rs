//! Node classification, link prediction and benchmark grids.

mod bench;
mod classify;
mod labels;
mod linkpred;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use bench::{benchmark, write_bench_csv, BenchGrid};
pub use classify::{
    micro_f1, micro_f1_from_counts, node_classification, node_classification_with, stratified_folds, LogisticConfig,
    OneVsRest,
};
pub use labels::LabelSet;
pub use linkpred::{
    auroc, link_prediction, score_split, sigmoid_dot, split_edges, LinkPredResult, LinkSplit, TypedPair,
};

use crate::error::{Error, Result};

/// Mean and population standard deviation of a metric.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    #[serde(skip)]
    pub values: Vec<f64>,
}

impl MetricSummary {
    pub fn from_values(values: Vec<f64>) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        MetricSummary {
            mean,
            std: var.sqrt(),
            values,
        }
    }
}

/// Wall-clock seconds per pipeline stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub coarsen_seconds: f64,
    pub embed_seconds: f64,
    pub refine_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub strategy: String,
    pub level: usize,
    pub micro_f1: Option<MetricSummary>,
    pub auroc: Option<MetricSummary>,
    pub timings: StageTimings,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, body + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&body).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    fn csv_row(&self, w: &mut impl Write) -> std::io::Result<()> {
        let opt = |m: &Option<MetricSummary>| match m {
            Some(m) => (m.mean.to_string(), m.std.to_string()),
            None => (String::new(), String::new()),
        };
        let (f1, f1s) = opt(&self.micro_f1);
        let (au, aus) = opt(&self.auroc);
        let t = &self.timings;
        writeln!(
            w,
            "{},{},{},{f1},{f1s},{au},{aus},{},{},{},{}",
            self.dataset,
            self.strategy,
            self.level,
            t.coarsen_seconds,
            t.embed_seconds,
            t.refine_seconds,
            t.total_seconds
        )
    }
}

pub const CSV_HEADER: &str =
    "dataset,strategy,level,micro_f1_mean,micro_f1_std,auroc_mean,auroc_std,coarsen_seconds,embed_seconds,refine_seconds,total_seconds";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_stats() {
        let s = MetricSummary::from_values(vec![1.0, 3.0]);
        assert_eq!((s.mean, s.std), (2.0, 1.0));
    }

    #[test]
    fn report_json_keys() {
        let r = EvalReport {
            dataset: "x".into(),
            strategy: "lsh".into(),
            level: 2,
            micro_f1: Some(MetricSummary::from_values(vec![0.5])),
            auroc: None,
            timings: StageTimings::default(),
            warnings: vec![],
            config: serde_json::Value::Null,
        };
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert_eq!(v["micro_f1"]["mean"], 0.5);
        assert!(v["timings"]["refine_seconds"].is_number());
        assert!(v.get("config").is_none());
    }
}
