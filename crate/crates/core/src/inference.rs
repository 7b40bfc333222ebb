//! Sandwich covariance, confidence intervals and Wald tests for ES
//! regression coefficients.
//!
//! With `Σ̂ = xᵀx/n` and `Ω̂ = (1/n) Σ ω̂_i² x_i x_iᵀ` the asymptotic covariance
//! of `θ̂` is `Σ̂⁻¹Ω̂Σ̂⁻¹ / (α² n)`. The robust variant clips `ω̂_i` at `γ`
//! before squaring.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::huber::huber_psi;
use crate::linalg::{symmetrize, Cholesky, Matrix};
use crate::normal;

/// `ε̂_i = y_i − x_iᵀβ̂` and `ω̂_i = ε̂_i 1(ε̂_i ≤ 0) + α x_iᵀ(β̂ − θ̂)`.
pub fn es_residuals(data: &Dataset, beta: &[f64], theta: &[f64], alpha: f64) -> (Vec<f64>, Vec<f64>) {
    let q = data.fitted(beta);
    let e = data.fitted(theta);
    let eps: Vec<f64> = data.y().iter().zip(&q).map(|(y, q)| y - q).collect();
    let omega = eps
        .iter()
        .zip(q.iter().zip(&e))
        .map(|(&r, (q, e))| if r <= 0.0 { r } else { 0.0 } + alpha * (q - e))
        .collect();
    (eps, omega)
}

#[derive(Debug, Clone, Serialize)]
pub struct CovarianceEstimate {
    /// `Ω̂` or `Ω̂_γ`.
    pub omega: Matrix,
    /// `Σ̂⁻¹ Ω̂ Σ̂⁻¹`.
    pub sandwich: Matrix,
    pub gamma: Option<f64>,
}

fn sandwich_from_weights(data: &Dataset, w: &[f64], gamma: Option<f64>) -> Result<CovarianceEstimate> {
    let n = data.n() as f64;
    let mut omega = data.x().weighted_gram(Some(w));
    omega.scale(1.0 / n);
    let mut sigma = data.x().weighted_gram(None);
    sigma.scale(1.0 / n);
    let sigma_inv = Cholesky::new(&sigma)?.inverse();
    let mut sandwich = sigma_inv.matmul(&omega).matmul(&sigma_inv);
    symmetrize(&mut sandwich);
    Ok(CovarianceEstimate { omega, sandwich, gamma })
}

/// Plug-in `Ω̂ = (1/n) Σ ω̂_i² x_i x_iᵀ` and its sandwich.
pub fn plugin_covariance(data: &Dataset, omega_hat: &[f64]) -> Result<CovarianceEstimate> {
    check_len(data, omega_hat)?;
    let w: Vec<f64> = omega_hat.iter().map(|v| v * v).collect();
    sandwich_from_weights(data, &w, None)
}

/// Truncated `Ω̂_γ = (1/n) Σ ψ_γ(ω̂_i)² x_i x_iᵀ`; `gamma = None` applies
/// [`default_gamma`].
pub fn truncated_covariance(data: &Dataset, omega_hat: &[f64], gamma: Option<f64>) -> Result<CovarianceEstimate> {
    check_len(data, omega_hat)?;
    let g = match gamma {
        Some(g) if g > 0.0 => g,
        Some(g) => return Err(Error::invalid(format!("gamma must be positive, got {g}"))),
        None => default_gamma(omega_hat, data.p()),
    };
    let w: Vec<f64> = omega_hat.iter().map(|&v| huber_psi(v, g).powi(2)).collect();
    sandwich_from_weights(data, &w, Some(g))
}

fn check_len(data: &Dataset, omega_hat: &[f64]) -> Result<()> {
    if omega_hat.len() != data.n() {
        return Err(Error::invalid("residual vector length does not match the sample size"));
    }
    Ok(())
}

/// Constant multiplying [`gamma_rate`] in the default truncation level.
pub const DEFAULT_GAMMA_SCALE: f64 = 2.0;

/// `{α̂₃ n / (p ln n)}^{1/3}` with `α̂₃ = (1/n) Σ |ω̂_i|³`.
pub fn gamma_rate(omega_hat: &[f64], p: usize) -> f64 {
    let n = omega_hat.len() as f64;
    let a3 = omega_hat.iter().map(|v| v.abs().powi(3)).sum::<f64>() / n;
    (a3 * n / (p as f64 * n.ln().max(f64::MIN_POSITIVE))).cbrt()
}

/// `DEFAULT_GAMMA_SCALE · gamma_rate`. With a unit constant the truncation
/// already bites on Gaussian residuals at `n = 50p/α` and intervals
/// under-cover.
pub fn default_gamma(omega_hat: &[f64], p: usize) -> f64 {
    DEFAULT_GAMMA_SCALE * gamma_rate(omega_hat, p)
}

/// How `Ω` is estimated when building intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "rule", content = "value")]
pub enum GammaRule {
    /// No truncation (`γ = ∞`).
    Plain,
    /// See [`default_gamma`].
    Default,
    /// `c` times [`gamma_rate`].
    Scaled(f64),
    Fixed(f64),
}

impl GammaRule {
    pub fn covariance(self, data: &Dataset, omega_hat: &[f64]) -> Result<CovarianceEstimate> {
        match self {
            GammaRule::Plain => plugin_covariance(data, omega_hat),
            GammaRule::Default => truncated_covariance(data, omega_hat, None),
            GammaRule::Scaled(c) if c > 0.0 && c.is_finite() => {
                truncated_covariance(data, omega_hat, Some(c * gamma_rate(omega_hat, data.p())))
            }
            GammaRule::Scaled(c) => Err(Error::invalid(format!("gamma scale must be positive and finite, got {c}"))),
            GammaRule::Fixed(g) if g.is_infinite() && g > 0.0 => plugin_covariance(data, omega_hat),
            GammaRule::Fixed(g) => truncated_covariance(data, omega_hat, Some(g)),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InferenceResult {
    /// Sandwich matrix `Σ̂⁻¹Ω̂Σ̂⁻¹`; divide by `α² n` for the covariance of `θ̂`.
    pub cov: Matrix,
    pub se: Vec<f64>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
    pub level: f64,
    pub gamma: Option<f64>,
}

/// `θ̂_j ± z (α√n)⁻¹ (sandwich)_jj^{1/2}` with `z` the upper `(1 − level)/2`
/// normal quantile.
pub fn confidence_intervals(theta: &[f64], sandwich: &Matrix, n: usize, alpha: f64, level: f64) -> Result<InferenceResult> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("level must lie in (0, 1), got {level}")));
    }
    if sandwich.nrows() != theta.len() || sandwich.ncols() != theta.len() {
        return Err(Error::invalid("sandwich dimension does not match theta"));
    }
    let z = normal::critical_value(level);
    let scale = alpha * (n as f64).sqrt();
    let se: Vec<f64> = sandwich.diagonal().iter().map(|d| d.max(0.0).sqrt() / scale).collect();
    Ok(InferenceResult {
        cov: sandwich.clone(),
        ci_lower: theta.iter().zip(&se).map(|(t, s)| t - z * s).collect(),
        ci_upper: theta.iter().zip(&se).map(|(t, s)| t + z * s).collect(),
        se,
        level,
        gamma: None,
    })
}

/// Residuals, covariance and intervals in one call.
pub fn infer(
    data: &Dataset,
    beta: &[f64],
    theta: &[f64],
    alpha: f64,
    level: f64,
    rule: GammaRule,
) -> Result<InferenceResult> {
    let (_, omega) = es_residuals(data, beta, theta, alpha);
    let cov = rule.covariance(data, &omega)?;
    let mut out = confidence_intervals(theta, &cov.sandwich, data.n(), alpha, level)?;
    out.gamma = cov.gamma;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WaldTest {
    pub statistic: f64,
    pub p_value: f64,
}

/// `T = α√n (aᵀθ̂ − c0) / ρ̂` with `ρ̂² = aᵀ (sandwich) a`; two-sided normal p-value.
pub fn wald_test(theta: &[f64], sandwich: &Matrix, a: &[f64], c0: f64, n: usize, alpha: f64) -> Result<WaldTest> {
    if a.len() != theta.len() || a.iter().all(|&v| v == 0.0) {
        return Err(Error::invalid("contrast must be nonzero and match theta"));
    }
    let rho2: f64 = crate::linalg::dot(a, &sandwich.mul_vec(a));
    if rho2 <= 1e-14 {
        return Err(Error::ZeroVariance);
    }
    let est: f64 = crate::linalg::dot(a, theta);
    let statistic = alpha * (n as f64).sqrt() * (est - c0) / rho2.sqrt();
    let p_value = (2.0 * (1.0 - normal::cdf(statistic.abs()))).min(1.0);
    Ok(WaldTest { statistic, p_value })
}
