//! The `simulate` command: configuration, execution and report files.
//!
//! `report.json` holds `{"settings": [{"label", "report"}]}` where each
//! `report` is a full [`SimulationReport`]. `summary.csv` has the columns
//! `setting,method,metric,mean,se,count`, one row per method and metric.

use std::path::Path;

use serde::{Deserialize, Serialize};

use robust_es::sim::{default_sample_size, run_replications, Design, FirstStage, NoiseDist, SimConfig, SimulationReport};
use robust_es::{EsMethod, GammaRule, SolverControl};

use crate::fit::parse_gamma;
use crate::output::{to_json, write_atomic};
use crate::{CliError, CliResult};

/// Configuration file contents (TOML or JSON). Every field is optional;
/// command-line flags override the file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimFile {
    /// `location-scale` or `noncross`.
    pub design: Option<String>,
    /// Sphere radius of the non-crossing design.
    pub radius: Option<f64>,
    pub p: Option<usize>,
    /// `normal` or `t<df>`.
    pub dist: Option<String>,
    pub alpha: Option<f64>,
    /// Several levels; each becomes its own setting.
    pub alphas: Option<Vec<f64>>,
    pub n: Option<usize>,
    pub reps: Option<usize>,
    pub methods: Option<Vec<String>>,
    pub seed: Option<u64>,
    /// Confidence level; `0` disables inference.
    pub level: Option<f64>,
    pub gamma: Option<String>,
    /// `near-exact`, `default`, or a bandwidth.
    pub first_stage: Option<String>,
    pub redraw: Option<bool>,
    pub rel_error_intercept: Option<bool>,
    pub timings: Option<bool>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
}

impl SimFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
        } else {
            toml::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
        }
    }

    /// Fields set in `over` replace those in `self`.
    pub fn merge(self, over: SimFile) -> SimFile {
        macro_rules! pick {
            ($($f:ident),*) => { SimFile { $($f: over.$f.or(self.$f)),* } };
        }
        pick!(design, radius, p, dist, alpha, alphas, n, reps, methods, seed, level, gamma, first_stage, redraw,
              rel_error_intercept, timings, tol, max_iter)
    }

    /// One labelled configuration per quantile level.
    pub fn settings(&self) -> CliResult<Vec<(String, SimConfig)>> {
        let bad = |m: String| CliError::input(m);
        let dist: NoiseDist = match &self.dist {
            Some(d) => d.parse().map_err(|e: robust_es::Error| bad(e.to_string()))?,
            None => NoiseDist::Normal,
        };
        let design = match self.design.as_deref().unwrap_or("location-scale") {
            "location-scale" => Design::LocationScale,
            "noncross" => Design::Noncross { radius: self.radius.unwrap_or(1.0) },
            other => return Err(bad(format!("unknown design `{other}` (expected location-scale or noncross)"))),
        };
        let alphas = match (&self.alphas, self.alpha) {
            (Some(a), None) if !a.is_empty() => a.clone(),
            (None, Some(a)) => vec![a],
            (None, None) => vec![0.1],
            _ => return Err(bad("give either alpha or a non-empty alphas list".into())),
        };
        let methods = match &self.methods {
            Some(ms) => ms
                .iter()
                .map(|m| m.parse::<EsMethod>().map_err(|e| bad(e.to_string())))
                .collect::<CliResult<Vec<_>>>()?,
            None => vec![EsMethod::Ls, EsMethod::Huber],
        };
        let gamma = match &self.gamma {
            Some(g) => parse_gamma(g).map_err(bad)?,
            None => GammaRule::Default,
        };
        let first_stage = match self.first_stage.as_deref() {
            None | Some("near-exact") => FirstStage::NearExact,
            Some("default") => FirstStage::Default,
            Some(h) => match h.parse::<f64>() {
                Ok(h) if h > 0.0 => FirstStage::Fixed(h),
                _ => return Err(bad(format!("bad first_stage `{h}`"))),
            },
        };
        let level = match self.level {
            Some(0.0) => None,
            Some(l) => Some(l),
            None => Some(0.95),
        };
        let mut control = SolverControl::default();
        if let Some(t) = self.tol {
            control = control.with_tol(t);
        }
        if let Some(m) = self.max_iter {
            control = control.with_max_iter(m);
        }
        let p = self.p.unwrap_or(20);
        let mut out = Vec::with_capacity(alphas.len());
        for (i, &alpha) in alphas.iter().enumerate() {
            let mut c = SimConfig::new(design, p, dist, alpha);
            c.n = self.n;
            c.methods = methods.clone();
            c.reps = self.reps.unwrap_or(200);
            c.seed = robust_es::rng::split_seed(self.seed.unwrap_or(0), i as u64);
            c.level = level;
            c.gamma = gamma;
            c.first_stage = first_stage;
            c.redraw_coefficients = self.redraw.unwrap_or(false);
            c.rel_error_intercept = self.rel_error_intercept.unwrap_or(false);
            c.record_timings = self.timings.unwrap_or(false);
            c.control = control;
            c.validate().map_err(|e| bad(e.to_string()))?;
            out.push((format!("alpha={alpha}"), c));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Setting {
    pub label: String,
    pub report: SimulationReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyReport {
    pub settings: Vec<Setting>,
}

pub fn run_settings(settings: Vec<(String, SimConfig)>) -> CliResult<StudyReport> {
    let mut out = Vec::with_capacity(settings.len());
    for (label, cfg) in settings {
        let report = run_replications(&cfg).map_err(|e| CliError::from_lib(&label, e))?;
        out.push(Setting { label, report });
    }
    Ok(StudyReport { settings: out })
}

/// `summary.csv` contents. Floats use the shortest round-trip form.
pub fn summary_csv(study: &StudyReport) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::input(format!("CSV encoding failed: {e}"));
    w.write_record(["setting", "method", "metric", "mean", "se", "count"]).map_err(err)?;
    for s in &study.settings {
        for r in &s.report.summary {
            w.write_record([
                s.label.clone(),
                r.method.to_string(),
                r.metric.clone(),
                r.mean.to_string(),
                r.se.to_string(),
                r.count.to_string(),
            ])
            .map_err(err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| CliError::input(format!("CSV encoding failed: {e}")))?;
    String::from_utf8(bytes).map_err(|e| CliError::input(e.to_string()))
}

/// Writes `report.json` and `summary.csv` under `dir`.
pub fn write_study(dir: &Path, study: &StudyReport) -> CliResult<()> {
    let json = to_json(study)?;
    let csv = summary_csv(study)?;
    write_atomic(&dir.join("report.json"), json.as_bytes())?;
    write_atomic(&dir.join("summary.csv"), csv.as_bytes())
}

/// `⌈scale · n⌉`, never below `p + 2`.
pub fn scaled_n(n: usize, p: usize, scale: f64) -> usize {
    ((n as f64 * scale).ceil() as usize).max(p + 2)
}

/// Sample size of a location-scale setting before scaling.
pub fn auto_n(p: usize, alpha: f64) -> usize {
    default_sample_size(p, alpha)
}
