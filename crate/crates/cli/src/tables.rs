//! Presets that rerun the published simulation tables and compare the
//! results with the reported numbers.

use serde::Serialize;

use robust_es::sim::{lookup, Design, NoiseDist, SimConfig, SimulationReport};
use robust_es::EsMethod;

use crate::simulate::{auto_n, scaled_n};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableId {
    /// Mean relative error under t2.5 noise.
    TRelerr,
    /// Mean relative error under normal noise.
    NormalRelerr,
    /// Interval coverage and width under t2.5 noise.
    TCoverage,
    /// Interval coverage and width under normal noise.
    NormalCoverage,
    /// Squared error of the non-crossing fits, normal noise.
    NoncrossFig,
    /// Squared error of the non-crossing fits, t2.5 noise.
    NoncrossFigT,
}

pub const ALL_TABLES: [TableId; 6] = [
    TableId::TRelerr,
    TableId::NormalRelerr,
    TableId::TCoverage,
    TableId::NormalCoverage,
    TableId::NoncrossFig,
    TableId::NoncrossFigT,
];

pub const ALPHAS: [f64; 3] = [0.05, 0.1, 0.2];
const T25: NoiseDist = NoiseDist::StudentT { df: 2.5 };

impl std::str::FromStr for TableId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        ALL_TABLES
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown table `{s}`; expected one of {}", ALL_TABLES.map(|t| t.name()).join(", ")))
    }
}

impl TableId {
    pub fn name(self) -> &'static str {
        match self {
            TableId::TRelerr => "t-relerr",
            TableId::NormalRelerr => "normal-relerr",
            TableId::TCoverage => "t-coverage",
            TableId::NormalCoverage => "normal-coverage",
            TableId::NoncrossFig => "noncross-fig",
            TableId::NoncrossFigT => "noncross-fig-t",
        }
    }

    pub fn default_reps(self) -> usize {
        match self {
            TableId::TRelerr | TableId::NormalRelerr => 200,
            _ => 500,
        }
    }

    pub fn settings(self, reps: usize, scale: f64, seed: u64) -> Vec<(String, SimConfig)> {
        match self {
            TableId::TRelerr | TableId::TCoverage => location_scale_settings(T25, reps, scale, seed),
            TableId::NormalRelerr | TableId::NormalCoverage => location_scale_settings(NoiseDist::Normal, reps, scale, seed),
            TableId::NoncrossFig => vec![noncross_setting(NoiseDist::Normal, 1.0, 5000, reps, scale, seed)],
            TableId::NoncrossFigT => vec![noncross_setting(T25, 5f64.sqrt(), 8000, reps, scale, seed)],
        }
    }

    /// Band checks against the reported values. `reports` follows the order
    /// of [`TableId::settings`].
    pub fn checks(self, reports: &[&SimulationReport]) -> Vec<Check> {
        let mut c = Checks::default();
        for r in reports {
            let failed = r.records.iter().filter(|x| x.error.is_some()).count();
            c.band(format!("failed replications (n={})", r.n), None, failed as f64, 0.0, 0.0);
        }
        match self {
            TableId::TRelerr => {
                let ah = [0.484, 0.470, 0.429];
                let ls = [0.612, 0.606, 0.532];
                for (i, r) in reports.iter().enumerate() {
                    let a = ALPHAS[i];
                    let (vh, vl) = (mean(r, EsMethod::Huber, "rel_error"), mean(r, EsMethod::Ls, "rel_error"));
                    c.band(format!("2S-AH rel error, alpha={a}"), Some(ah[i]), vh, ah[i] - 0.05, ah[i] + 0.05);
                    c.info(format!("2S-LS rel error, alpha={a}"), Some(ls[i]), vl);
                    c.holds(format!("2S-AH < 2S-LS, alpha={a}"), vh, vh < vl);
                }
            }
            TableId::NormalRelerr => {
                let reference = [0.130, 0.150, 0.171];
                for (i, r) in reports.iter().enumerate() {
                    let a = ALPHAS[i];
                    let (vh, vl) = (mean(r, EsMethod::Huber, "rel_error"), mean(r, EsMethod::Ls, "rel_error"));
                    c.band(format!("2S-AH rel error, alpha={a}"), Some(reference[i]), vh, reference[i] - 0.02, reference[i] + 0.02);
                    c.band(format!("2S-LS rel error, alpha={a}"), Some(reference[i]), vl, reference[i] - 0.02, reference[i] + 0.02);
                    c.band(format!("|2S-AH - 2S-LS|, alpha={a}"), None, (vh - vl).abs(), 0.0, 0.005);
                }
            }
            TableId::TCoverage => {
                let ah = [(0.947, 3.633), (0.946, 2.790), (0.948, 2.243)];
                let ls = [(0.952, 4.521), (0.950, 3.397), (0.953, 2.687)];
                for (i, r) in reports.iter().enumerate() {
                    let a = ALPHAS[i];
                    c.band(format!("2S-AH coverage, alpha={a}"), Some(ah[i].0), mean(r, EsMethod::Huber, "coverage"), 0.92, 0.97);
                    let (wh, wl) = (mean(r, EsMethod::Huber, "width"), mean(r, EsMethod::Ls, "width"));
                    if a == 0.1 {
                        c.band(format!("2S-AH width, alpha={a}"), Some(ah[i].1), wh, ah[i].1 - 0.4, ah[i].1 + 0.4);
                        c.holds(format!("2S-AH width < reported 2S-LS width {}, alpha={a}", ls[i].1), wh, wh < ls[i].1);
                        c.holds(format!("2S-AH width < 2S-LS width, alpha={a}"), wh, wh < wl);
                    } else {
                        c.info(format!("2S-AH width, alpha={a}"), Some(ah[i].1), wh);
                    }
                    c.info(format!("2S-LS coverage, alpha={a}"), Some(ls[i].0), mean(r, EsMethod::Ls, "coverage"));
                    c.info(format!("2S-LS width, alpha={a}"), Some(ls[i].1), wl);
                }
            }
            TableId::NormalCoverage => {
                let ah = [(0.950, 0.595), (0.949, 0.660), (0.948, 0.744)];
                for (i, r) in reports.iter().enumerate() {
                    let a = ALPHAS[i];
                    c.band(format!("2S-AH coverage, alpha={a}"), Some(ah[i].0), mean(r, EsMethod::Huber, "coverage"), 0.92, 0.97);
                    c.info(format!("2S-AH width, alpha={a}"), Some(ah[i].1), mean(r, EsMethod::Huber, "width"));
                    c.info(format!("2S-LS coverage, alpha={a}"), None, mean(r, EsMethod::Ls, "coverage"));
                    c.info(format!("2S-LS width, alpha={a}"), None, mean(r, EsMethod::Ls, "width"));
                }
            }
            TableId::NoncrossFig | TableId::NoncrossFigT => {
                let reference = if self == TableId::NoncrossFig {
                    [0.0534, 0.0407, 0.0532, 0.0408]
                } else {
                    [0.8587, 0.5277, 0.4951, 0.3794]
                };
                let r = reports[0];
                let ms = [EsMethod::Ls, EsMethod::NcLs, EsMethod::Huber, EsMethod::NcHuber];
                let mse: Vec<f64> = ms.iter().map(|&m| mean(r, m, "sq_error")).collect();
                for (k, &m) in ms.iter().enumerate() {
                    c.band(format!("{m} MSE"), Some(reference[k]), mse[k], 0.7 * reference[k], 1.3 * reference[k]);
                }
                c.holds("nc-ls MSE < ls MSE".into(), mse[1], mse[1] < mse[0]);
                c.holds("nc-huber MSE <= huber MSE".into(), mse[3], mse[3] <= mse[2]);
                for m in [EsMethod::NcLs, EsMethod::NcHuber] {
                    let worst = r
                        .records
                        .iter()
                        .flat_map(|x| x.methods.iter().filter(|y| y.method == m))
                        .map(|y| y.crossings)
                        .max()
                        .unwrap_or(0);
                    c.band(format!("{m} crossings, worst replication"), None, worst as f64, 0.0, 0.0);
                }
                for m in [EsMethod::Ls, EsMethod::Huber] {
                    c.info(format!("{m} mean crossings"), None, mean(r, m, "crossings"));
                }
            }
        }
        c.0
    }
}

fn location_scale_settings(dist: NoiseDist, reps: usize, scale: f64, seed: u64) -> Vec<(String, SimConfig)> {
    ALPHAS
        .iter()
        .enumerate()
        .map(|(i, &alpha)| {
            let mut c = SimConfig::new(Design::LocationScale, 20, dist, alpha);
            c.n = Some(scaled_n(auto_n(20, alpha), 20, scale));
            c.reps = reps;
            c.seed = robust_es::rng::split_seed(seed, i as u64);
            c.redraw_coefficients = true;
            (format!("alpha={alpha}"), c)
        })
        .collect()
}

fn noncross_setting(dist: NoiseDist, radius: f64, n: usize, reps: usize, scale: f64, seed: u64) -> (String, SimConfig) {
    let mut c = SimConfig::new(Design::Noncross { radius }, 10, dist, 0.1);
    c.n = Some(scaled_n(n, 10, scale));
    c.reps = reps;
    c.seed = seed;
    c.level = None;
    c.methods = vec![EsMethod::Ls, EsMethod::NcLs, EsMethod::Huber, EsMethod::NcHuber];
    ("alpha=0.1".into(), c)
}

fn mean(r: &SimulationReport, m: EsMethod, metric: &str) -> f64 {
    lookup(&r.summary, m, metric).map_or(f64::NAN, |s| s.mean)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    /// Reported for reference only.
    Info,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub reference: Option<f64>,
    pub value: f64,
    /// Accepted interval, `None` for qualitative or informational checks.
    pub band: Option<(f64, f64)>,
    pub status: Status,
}

#[derive(Default)]
struct Checks(Vec<Check>);

impl Checks {
    fn band(&mut self, name: String, reference: Option<f64>, value: f64, lo: f64, hi: f64) {
        let ok = value >= lo && value <= hi;
        self.0.push(Check { name, reference, value, band: Some((lo, hi)), status: if ok { Status::Pass } else { Status::Fail } });
    }

    fn holds(&mut self, name: String, value: f64, ok: bool) {
        self.0.push(Check { name, reference: None, value, band: None, status: if ok { Status::Pass } else { Status::Fail } });
    }

    fn info(&mut self, name: String, reference: Option<f64>, value: f64) {
        self.0.push(Check { name, reference, value, band: None, status: Status::Info });
    }
}

/// True when the run is too small for the bands to be meaningful.
pub fn is_smoke(table: TableId, reps: usize, scale: f64) -> bool {
    reps < table.default_reps().min(100) || scale != 1.0
}

/// Renders checks as aligned text lines.
pub fn render(table: TableId, checks: &[Check], smoke: bool) -> String {
    let mut s = format!("{}{}\n", table.name(), if smoke { " (smoke run: bands are advisory)" } else { "" });
    for c in checks {
        let status = match (&c.status, smoke) {
            (Status::Info, _) => "info",
            (Status::Pass, _) => "PASS",
            (Status::Fail, false) => "FAIL",
            (Status::Fail, true) => "off",
        };
        let reference = c.reference.map_or("-".to_string(), |p| format!("{p:.4}"));
        let band = c.band.map_or(String::new(), |(lo, hi)| format!("  band [{lo:.4}, {hi:.4}]"));
        s.push_str(&format!("  {status:<4}  {:<48} ref {reference:>8}  got {:>9.4}{band}\n", c.name, c.value));
    }
    s
}
