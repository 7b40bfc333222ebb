//! The `fit` command: two-step ES regression on a CSV file.

use serde::Serialize;

use robust_es::qr::smoothed_qr_fit;
use robust_es::sim::fit_method;
use robust_es::{infer, Dataset, EsMethod, FitDiagnostics, GammaRule, SolverControl};

use crate::{CliError, CliResult};

/// Parses `default`, `plain` (or `inf`), `scaled:C`, or a positive number.
pub fn parse_gamma(s: &str) -> Result<GammaRule, String> {
    let s = s.trim().to_ascii_lowercase();
    match s.as_str() {
        "default" => return Ok(GammaRule::Default),
        "plain" | "inf" | "none" => return Ok(GammaRule::Plain),
        _ => {}
    }
    if let Some(c) = s.strip_prefix("scaled:") {
        let c: f64 = c.parse().map_err(|_| format!("bad gamma scale `{c}`"))?;
        if !(c > 0.0 && c.is_finite()) {
            return Err(format!("gamma scale must be positive, got {c}"));
        }
        return Ok(GammaRule::Scaled(c));
    }
    let g: f64 = s.parse().map_err(|_| format!("bad gamma `{s}`: expected default, plain, scaled:C or a number"))?;
    if g > 0.0 {
        Ok(GammaRule::Fixed(g))
    } else {
        Err(format!("gamma must be positive, got {g}"))
    }
}

#[derive(Debug, Clone)]
pub struct FitRequest {
    pub alpha: f64,
    pub method: EsMethod,
    pub level: f64,
    /// Truncation rule for the Huber methods; least-squares methods use the
    /// plain covariance unless a rule is given explicitly.
    pub gamma: Option<GammaRule>,
    pub bandwidth: Option<f64>,
    pub control: SolverControl,
}

impl FitRequest {
    pub fn new(alpha: f64, method: EsMethod) -> Self {
        Self { alpha, method, level: 0.95, gamma: None, bandwidth: None, control: SolverControl::default() }
    }

    pub fn validate(&self) -> CliResult<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CliError::input(format!("--alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(CliError::input(format!("--level must lie in (0, 1), got {}", self.level)));
        }
        if let Some(h) = self.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(CliError::input(format!("--bandwidth must be positive, got {h}")));
            }
        }
        if self.method == EsMethod::Oracle {
            return Err(CliError::input("the oracle method needs the true quantile coefficients and is simulation-only"));
        }
        Ok(())
    }

    fn gamma_rule(&self) -> GammaRule {
        match (self.gamma, self.method) {
            (Some(g), _) => g,
            (None, EsMethod::Huber | EsMethod::NcHuber) => GammaRule::Default,
            (None, _) => GammaRule::Plain,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub n: usize,
    pub p: usize,
    pub columns: Vec<String>,
    pub bandwidth: f64,
    pub quantile: FitDiagnostics,
    pub es: FitDiagnostics,
}

/// The JSON document printed by `fit`.
#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub alpha: f64,
    pub method: EsMethod,
    pub beta: Vec<f64>,
    pub theta: Vec<f64>,
    pub tau: Option<f64>,
    pub se: Vec<f64>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
    pub gamma: Option<f64>,
    pub crossings: usize,
    pub diagnostics: Diagnostics,
}

/// Runs both stages and inference. `columns` names the coefficients,
/// intercept first.
pub fn run_fit(data: &Dataset, columns: Vec<String>, req: &FitRequest) -> CliResult<FitReport> {
    req.validate()?;
    let q = smoothed_qr_fit(data, req.alpha, req.bandwidth, &req.control, None)
        .map_err(|e| CliError::from_lib("quantile stage", e))?;
    let fit = fit_method(req.method, data, &q.beta, &q.beta, req.alpha, &req.control)
        .map_err(|e| CliError::from_lib("expected shortfall stage", e))?;
    let inf = infer(data, &q.beta, &fit.theta, req.alpha, req.level, req.gamma_rule())
        .map_err(|e| CliError::from_lib("inference", e))?;
    Ok(FitReport {
        alpha: req.alpha,
        method: req.method,
        beta: q.beta,
        theta: fit.theta,
        tau: fit.tau,
        se: inf.se,
        ci_lower: inf.ci_lower,
        ci_upper: inf.ci_upper,
        gamma: inf.gamma,
        crossings: fit.crossings,
        diagnostics: Diagnostics {
            n: data.n(),
            p: data.p(),
            columns,
            bandwidth: q.bandwidth,
            quantile: q.diagnostics,
            es: fit.diagnostics,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_flags() {
        assert_eq!(parse_gamma("default"), Ok(GammaRule::Default));
        assert_eq!(parse_gamma("plain"), Ok(GammaRule::Plain));
        assert_eq!(parse_gamma("scaled:1.5"), Ok(GammaRule::Scaled(1.5)));
        assert_eq!(parse_gamma("3"), Ok(GammaRule::Fixed(3.0)));
        assert!(parse_gamma("-1").is_err());
        assert!(parse_gamma("scaled:0").is_err());
        assert!(parse_gamma("x").is_err());
    }

    #[test]
    fn rejects_oracle_and_bad_levels() {
        let data = Dataset::with_intercept(&[vec![0.0], vec![1.0], vec![2.0]], vec![1.0, 2.0, 4.0]).unwrap();
        let cols = vec!["(intercept)".into(), "x".into()];
        assert!(run_fit(&data, cols.clone(), &FitRequest::new(0.5, EsMethod::Oracle)).is_err());
        let mut r = FitRequest::new(0.5, EsMethod::Ls);
        r.level = 1.0;
        assert_eq!(run_fit(&data, cols, &r).unwrap_err().code, crate::EXIT_INPUT);
    }
}
