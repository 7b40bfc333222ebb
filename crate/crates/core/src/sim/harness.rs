//! Monte Carlo replication of the two-step estimators.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SolverControl};
use crate::error::{Error, Result};
use crate::es::{es_ls_fit, oracle_es_fit, EsFit, EsMethod};
use crate::huber::adaptive_huber_es;
use crate::inference::{infer, GammaRule};
use crate::noncross::{nc_es_huber_fit, nc_es_ls_fit};
use crate::qr::{near_exact_bandwidth, smoothed_qr_fit};
use crate::rng::split_seed;

use super::dist::NoiseDist;
use super::hetero::{default_sample_size, HeteroModel, TrueCoefficients};
use super::report::{summarize, MethodRecord, ReplicationRecord, SummaryRow};

/// Which data-generating design to use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Design {
    /// Rademacher `γ*`, `0.5·Bernoulli(1/2)` `η*`, `Unif(0, 1.5)` covariates.
    LocationScale,
    /// Intercept 2, `Unif(0, 2)` covariates, two heteroscedastic slopes and
    /// `γ*` on a sphere of the given radius.
    Noncross { radius: f64 },
}

/// Bandwidth of the first-stage quantile fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "kebab-case")]
pub enum FirstStage {
    /// `max(0.05, ((p + ln n)/n)^{2/5})`.
    Default,
    /// `0.01 · sd(y)`, close to unsmoothed quantile regression.
    NearExact,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub design: Design,
    /// Covariates excluding the intercept.
    pub p: usize,
    pub dist: NoiseDist,
    pub alpha: f64,
    /// Sample size; `None` means `⌈50p/α⌉`.
    pub n: Option<usize>,
    pub methods: Vec<EsMethod>,
    pub reps: usize,
    pub seed: u64,
    /// Confidence level; `None` skips inference.
    pub level: Option<f64>,
    /// Covariance rule for the Huber fits; least-squares fits use `Ω̂`.
    pub gamma: GammaRule,
    pub first_stage: FirstStage,
    /// Redraw `γ*`, `η*` in every replication instead of once.
    pub redraw_coefficients: bool,
    /// Include the intercept in the relative error.
    pub rel_error_intercept: bool,
    pub record_timings: bool,
    pub control: SolverControl,
}

impl SimConfig {
    pub fn new(design: Design, p: usize, dist: NoiseDist, alpha: f64) -> Self {
        Self {
            design,
            p,
            dist,
            alpha,
            n: None,
            methods: vec![EsMethod::Ls, EsMethod::Huber],
            reps: 200,
            seed: 0,
            level: Some(0.95),
            gamma: GammaRule::Default,
            first_stage: FirstStage::NearExact,
            redraw_coefficients: false,
            rel_error_intercept: false,
            record_timings: false,
            control: SolverControl::default(),
        }
    }

    pub fn sample_size(&self) -> usize {
        self.n.unwrap_or_else(|| default_sample_size(self.p, self.alpha))
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::invalid("reps must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("at least one method is required"));
        }
        if let Some(l) = self.level {
            if !(l > 0.0 && l < 1.0) {
                return Err(Error::invalid(format!("level must lie in (0, 1), got {l}")));
            }
        }
        if self.sample_size() <= self.p + 1 {
            return Err(Error::invalid("sample size must exceed p + 1"));
        }
        self.control.validate()?;
        self.model(self.seed).map(|_| ())
    }

    /// The model for the replication whose coefficient seed is `seed`.
    pub fn model(&self, seed: u64) -> Result<HeteroModel> {
        match self.design {
            Design::LocationScale => HeteroModel::location_scale_design(self.p, self.dist, self.alpha, seed),
            Design::Noncross { radius } => HeteroModel::noncross_design(self.p, self.dist, self.alpha, radius, seed),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationReport {
    pub config: SimConfig,
    pub n: usize,
    /// Truth shared by all replications; `None` when coefficients are redrawn.
    pub truth: Option<TrueCoefficients>,
    pub records: Vec<ReplicationRecord>,
    pub summary: Vec<SummaryRow>,
}

/// Fits one ES method given a first-stage estimate.
pub fn fit_method(
    method: EsMethod,
    data: &Dataset,
    beta_hat: &[f64],
    beta_star: &[f64],
    alpha: f64,
    control: &SolverControl,
) -> Result<EsFit> {
    match method {
        EsMethod::Ls => es_ls_fit(data, beta_hat, alpha),
        EsMethod::Huber => adaptive_huber_es(data, beta_hat, alpha, control).map(|(f, _)| f),
        EsMethod::NcLs => nc_es_ls_fit(data, beta_hat, alpha),
        EsMethod::NcHuber => nc_es_huber_fit(data, beta_hat, alpha, control),
        EsMethod::Oracle => oracle_es_fit(data, beta_star, alpha),
    }
}

fn replicate_one(cfg: &SimConfig, shared: Option<&HeteroModel>, rep: u64) -> ReplicationRecord {
    let seed = split_seed(cfg.seed, rep);
    let result = (|| -> Result<Vec<MethodRecord>> {
        let owned;
        let model = match shared {
            Some(m) => m,
            None => {
                owned = cfg.model(split_seed(cfg.seed ^ 0xD1B5_4A32_D192_ED03, rep))?;
                &owned
            }
        };
        let (data, truth) = model.generate(cfg.sample_size(), seed)?;
        let h = match cfg.first_stage {
            FirstStage::Default => None,
            FirstStage::NearExact => Some(near_exact_bandwidth(data.y())),
            FirstStage::Fixed(h) => Some(h),
        };
        let qfit = smoothed_qr_fit(&data, cfg.alpha, h, &cfg.control, None)?;
        let mut out = Vec::with_capacity(cfg.methods.len());
        for &m in &cfg.methods {
            let start = Instant::now();
            let fit = fit_method(m, &data, &qfit.beta, &truth.beta_star, cfg.alpha, &cfg.control)?;
            let beta_for_ci = if m == EsMethod::Oracle { &truth.beta_star } else { &qfit.beta };
            let (covered, width) = match cfg.level {
                Some(level) => {
                    let rule = if m == EsMethod::Huber || m == EsMethod::NcHuber { cfg.gamma } else { GammaRule::Plain };
                    let inf = infer(&data, beta_for_ci, &fit.theta, cfg.alpha, level, rule)?;
                    (1..data.p())
                        .map(|j| {
                            let t = truth.theta_star[j];
                            (inf.ci_lower[j] <= t && t <= inf.ci_upper[j], inf.ci_upper[j] - inf.ci_lower[j])
                        })
                        .unzip()
                }
                None => (Vec::new(), Vec::new()),
            };
            let elapsed = start.elapsed().as_secs_f64() * 1e3;
            out.push(MethodRecord {
                method: m,
                rel_error: relative_error(&fit.theta, &truth.theta_star, cfg.rel_error_intercept),
                sq_error: fit.theta.iter().zip(&truth.theta_star).map(|(a, b)| (a - b).powi(2)).sum(),
                covered,
                width,
                crossings: fit.crossings,
                tau: fit.tau,
                converged: fit.diagnostics.converged,
                elapsed_ms: cfg.record_timings.then_some(elapsed),
            });
        }
        Ok(out)
    })();
    match result {
        Ok(methods) => ReplicationRecord { replication: rep, seed, methods, error: None },
        Err(e) => ReplicationRecord { replication: rep, seed, methods: Vec::new(), error: Some(e.to_string()) },
    }
}

/// `‖θ̂ − θ*‖₂ / ‖θ*‖₂`, optionally skipping coordinate 0.
pub fn relative_error(theta: &[f64], truth: &[f64], include_intercept: bool) -> f64 {
    let start = if include_intercept { 0 } else { 1 };
    let num: f64 = theta[start..].iter().zip(&truth[start..]).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = truth[start..].iter().map(|b| b * b).sum();
    (num / den).sqrt()
}

/// Runs `cfg.reps` independent replications in parallel on the current rayon
/// pool. Failed replications are recorded, not fatal.
pub fn run_replications(cfg: &SimConfig) -> Result<SimulationReport> {
    cfg.validate()?;
    let shared = if cfg.redraw_coefficients { None } else { Some(cfg.model(cfg.seed)?) };
    let truth = shared.as_ref().map(|m| m.true_coefficients()).transpose()?;
    let records: Vec<ReplicationRecord> =
        (0..cfg.reps as u64).into_par_iter().map(|rep| replicate_one(cfg, shared.as_ref(), rep)).collect();
    Ok(SimulationReport {
        summary: summarize(&cfg.methods, &records),
        n: cfg.sample_size(),
        config: cfg.clone(),
        truth,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::report::lookup;

    fn small(dist: NoiseDist) -> SimConfig {
        let mut c = SimConfig::new(Design::LocationScale, 3, dist, 0.2);
        c.n = Some(600);
        c.reps = 4;
        c.seed = 5;
        c.methods = vec![EsMethod::Ls, EsMethod::Huber, EsMethod::NcLs, EsMethod::NcHuber, EsMethod::Oracle];
        c
    }

    #[test]
    fn reproducible() {
        let cfg = small(NoiseDist::StudentT { df: 2.5 });
        let a = run_replications(&cfg).unwrap();
        let b = run_replications(&cfg).unwrap();
        assert_eq!(a.records, b.records);
        assert!(a.records.iter().all(|r| r.error.is_none()));
        for r in &a.records {
            for m in &r.methods {
                if m.method.is_constrained() {
                    assert_eq!(m.crossings, 0);
                }
                assert_eq!(m.covered.len(), 3);
            }
        }
    }

    #[test]
    fn summary_is_recomputable() {
        let cfg = small(NoiseDist::Normal);
        let rep = run_replications(&cfg).unwrap();
        let vals: Vec<f64> = rep
            .records
            .iter()
            .map(|r| r.methods.iter().find(|m| m.method == EsMethod::Huber).unwrap().rel_error)
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((lookup(&rep.summary, EsMethod::Huber, "rel_error").unwrap().mean - mean).abs() < 1e-15);
    }

    #[test]
    fn redraw_changes_truth_per_replication() {
        let mut cfg = small(NoiseDist::Normal);
        cfg.redraw_coefficients = true;
        let rep = run_replications(&cfg).unwrap();
        assert!(rep.truth.is_none());
        assert!(rep.records.iter().all(|r| r.error.is_none()));
    }

    #[test]
    fn relative_error_intercept_flag() {
        assert!((relative_error(&[5.0, 1.0, 1.0], &[0.0, 1.0, 2.0], false) - (1.0f64 / 5.0).sqrt()).abs() < 1e-15);
        assert!((relative_error(&[1.0, 1.0], &[0.0, 1.0], true) - 1.0).abs() < 1e-15);
    }
}
