//! Per-replication records and their aggregation.

use serde::{Deserialize, Serialize};

use crate::es::EsMethod;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRecord {
    pub method: EsMethod,
    /// `‖θ̂ − θ*‖₂ / ‖θ*‖₂` over the coordinates selected by the config.
    pub rel_error: f64,
    /// `‖θ̂ − θ*‖₂²` over all coordinates, intercept included.
    pub sq_error: f64,
    /// Coverage indicators for the slope coefficients; empty without inference.
    pub covered: Vec<bool>,
    pub width: Vec<f64>,
    pub crossings: usize,
    pub tau: Option<f64>,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<f64>,
}

impl MethodRecord {
    pub fn coverage(&self) -> Option<f64> {
        mean_of(self.covered.iter().map(|&c| if c { 1.0 } else { 0.0 }))
    }

    pub fn mean_width(&self) -> Option<f64> {
        mean_of(self.width.iter().copied())
    }
}

fn mean_of(it: impl ExactSizeIterator<Item = f64>) -> Option<f64> {
    let k = it.len();
    (k > 0).then(|| it.sum::<f64>() / k as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: u64,
    pub seed: u64,
    pub methods: Vec<MethodRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// One `method × metric` row of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: EsMethod,
    pub metric: String,
    pub mean: f64,
    /// Standard error of the mean across replications.
    pub se: f64,
    pub count: usize,
}

/// Mean and standard error `sd/√k`.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let k = values.len();
    if k == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    if k == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
    (mean, (var / k as f64).sqrt())
}

pub const METRICS: [&str; 6] = ["rel_error", "sq_error", "coverage", "width", "crossings", "failures"];

/// Summary rows for every method in `methods`, recomputed from the records.
pub fn summarize(methods: &[EsMethod], records: &[ReplicationRecord]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for &m in methods {
        let recs: Vec<&MethodRecord> = records
            .iter()
            .filter(|r| r.error.is_none())
            .filter_map(|r| r.methods.iter().find(|mr| mr.method == m))
            .collect();
        let mut push = |metric: &str, vals: Vec<f64>| {
            let (mean, se) = mean_se(&vals);
            rows.push(SummaryRow { method: m, metric: metric.into(), mean, se, count: vals.len() });
        };
        push("rel_error", recs.iter().map(|r| r.rel_error).collect());
        push("sq_error", recs.iter().map(|r| r.sq_error).collect());
        push("coverage", recs.iter().filter_map(|r| r.coverage()).collect());
        push("width", recs.iter().filter_map(|r| r.mean_width()).collect());
        push("crossings", recs.iter().map(|r| r.crossings as f64).collect());
        let failures = records.iter().filter(|r| r.error.is_some()).count() as f64;
        rows.push(SummaryRow { method: m, metric: "failures".into(), mean: failures, se: 0.0, count: records.len() });
    }
    rows
}

/// Looks up one summary value.
pub fn lookup<'a>(rows: &'a [SummaryRow], method: EsMethod, metric: &str) -> Option<&'a SummaryRow> {
    rows.iter().find(|r| r.method == method && r.metric == metric)
}
