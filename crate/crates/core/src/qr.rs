//! First stage: convolution-smoothed quantile regression.
//!
//! The check loss `ρ_α(u) = {α − 1(u<0)} u` is convolved with a Gaussian
//! kernel of bandwidth `h`, giving the smooth convex loss
//!
//! ```text
//! ρ_{α,h}(u) = u (α − Φ(−u/h)) + h φ(u/h),     ρ'_{α,h}(u) = α − Φ(−u/h).
//! ```
//!
//! The empirical risk `Q̂_h(β) = (1/n) Σ ρ_{α,h}(y_i − x_iᵀβ)` is minimized by
//! Barzilai–Borwein gradient descent, preconditioned by the Gram matrix
//! `G = xᵀx/n`, started from least squares with the
//! intercept shifted to the `α`-quantile of its residuals. Each BB step
//! is halved until the objective does not increase, and the run stops once
//! `‖∇Q̂_h‖₂ ≤ tol`.

use serde::Serialize;

use crate::data::{Dataset, FitDiagnostics, SolverControl};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm2, Cholesky};
use crate::normal;

/// Largest BB step accepted, matching the usual conquer safeguard.
const MAX_STEP: f64 = 100.0;
const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, Serialize)]
pub struct QuantileFit {
    pub beta: Vec<f64>,
    pub alpha: f64,
    pub bandwidth: f64,
    pub diagnostics: FitDiagnostics,
}

/// Koenker–Bassett check function.
pub fn check_loss(u: f64, alpha: f64) -> f64 {
    let ind = if u < 0.0 { 1.0 } else { 0.0 };
    (alpha - ind) * u
}

/// Check loss smoothed by a Gaussian kernel of bandwidth `h`.
pub fn smoothed_check_loss(u: f64, alpha: f64, h: f64) -> f64 {
    let t = u / h;
    u * (alpha - normal::cdf(-t)) + h * normal::pdf(t)
}

/// `max(0.05, ((p + ln n) / n)^{2/5})`.
pub fn default_bandwidth(n: usize, p: usize) -> f64 {
    let n = n as f64;
    (((p as f64 + n.ln()) / n).powf(0.4)).max(0.05)
}

/// Bandwidth used when a near-unsmoothed fit is wanted: `0.01 · sd(y)`.
pub fn near_exact_bandwidth(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (0.01 * var.sqrt()).max(1e-8)
}

/// Ordinary least squares `(xᵀx)⁻¹ xᵀy`.
pub fn least_squares(data: &Dataset) -> Result<Vec<f64>> {
    let chol = Cholesky::new(&data.x().weighted_gram(None))
        .map_err(|e| e.into_degenerate("least squares"))?;
    Ok(chol.solve(&data.x().tr_mul_vec(data.y())))
}

/// Smoothed empirical risk and its gradient for fixed data, level and bandwidth.
#[derive(Debug, Clone, Copy)]
pub struct SmoothedQuantileLoss<'a> {
    data: &'a Dataset,
    alpha: f64,
    bandwidth: f64,
}

impl<'a> SmoothedQuantileLoss<'a> {
    pub fn new(data: &'a Dataset, alpha: f64, bandwidth: f64) -> Self {
        Self { data, alpha, bandwidth }
    }

    pub fn objective(&self, beta: &[f64]) -> f64 {
        let resid = self.residuals(beta);
        self.objective_from_residuals(&resid)
    }

    pub fn gradient(&self, beta: &[f64]) -> Vec<f64> {
        let resid = self.residuals(beta);
        self.gradient_from_residuals(&resid)
    }

    fn residuals(&self, beta: &[f64]) -> Vec<f64> {
        let fit = self.data.fitted(beta);
        self.data.y().iter().zip(fit).map(|(y, f)| y - f).collect()
    }

    fn objective_from_residuals(&self, resid: &[f64]) -> f64 {
        self.evaluate(resid).0
    }

    /// Objective together with the score weights `{Φ(−r_i/h) − α}/n`, sharing
    /// one `Φ` evaluation per residual.
    fn evaluate(&self, resid: &[f64]) -> (f64, Vec<f64>) {
        let (a, h) = (self.alpha, self.bandwidth);
        let n = resid.len() as f64;
        let mut obj = 0.0;
        let w = resid
            .iter()
            .map(|&u| {
                let t = u / h;
                let c = normal::cdf(-t);
                obj += u * (a - c) + h * normal::pdf(t);
                (c - a) / n
            })
            .collect();
        (obj / n, w)
    }

    /// `(1/n) Σ {Φ(−r_i/h) − α} x_i`
    fn gradient_from_residuals(&self, resid: &[f64]) -> Vec<f64> {
        self.data.x().tr_mul_vec(&self.evaluate(resid).1)
    }
}

/// Index of a column whose entries are all one.
fn intercept_column(data: &Dataset) -> Option<usize> {
    (0..data.p()).find(|&j| data.x().col(j).iter().all(|&v| v == 1.0))
}

/// Fits the smoothed quantile regression at level `alpha`.
///
/// `bandwidth` defaults to [`default_bandwidth`]; `init` defaults to the least
/// squares fit. A run that exhausts `max_iter` is returned with
/// `converged = false`.
pub fn smoothed_qr_fit(
    data: &Dataset,
    alpha: f64,
    bandwidth: Option<f64>,
    control: &SolverControl,
    init: Option<&[f64]>,
) -> Result<QuantileFit> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("quantile level must lie in (0, 1), got {alpha}")));
    }
    control.validate()?;
    let h = bandwidth.unwrap_or_else(|| default_bandwidth(data.n(), data.p()));
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("bandwidth must be positive, got {h}")));
    }
    // The Gram factor doubles as the full-rank check and preconditions the
    // descent direction.
    let n = data.n() as f64;
    let mut g = data.x().weighted_gram(None);
    g.scale(1.0 / n);
    let gram = Cholesky::new(&g)
        .map_err(|e| e.into_degenerate("smoothed quantile regression"))?;
    let ls = gram.solve(&data.x().tr_mul_vec(data.y()).iter().map(|v| v / n).collect::<Vec<_>>());
    let mut beta = match init {
        Some(b) if b.len() == data.p() => b.to_vec(),
        Some(b) => {
            return Err(Error::invalid(format!("init has length {}, expected {}", b.len(), data.p())))
        }
        None => {
            // Shift the intercept so that a fraction alpha of residuals is negative.
            let mut b = ls;
            if let Some(j) = intercept_column(data) {
                let mut r: Vec<f64> = data.y().iter().zip(data.fitted(&b)).map(|(y, f)| y - f).collect();
                let k = ((alpha * r.len() as f64) as usize).min(r.len() - 1);
                let (_, q, _) = r.select_nth_unstable_by(k, f64::total_cmp);
                b[j] += *q;
            }
            b
        }
    };

    let loss = SmoothedQuantileLoss::new(data, alpha, h);
    let mut resid = loss.residuals(&beta);
    let (mut obj, w0) = loss.evaluate(&resid);
    let mut grad = data.x().tr_mul_vec(&w0);
    let mut gnorm = norm2(&grad);
    let mut step = 1.0;
    let mut iterations = 0;

    while gnorm > control.tol && iterations < control.max_iter {
        iterations += 1;
        // Preconditioned direction d = G⁻¹g; x·(−t·d) changes r by +t·x·d.
        let dir = gram.solve(&grad);
        let xd = data.fitted(&dir);
        let mut t = step;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = resid.iter().zip(&xd).map(|(r, d)| r + t * d).collect();
            let (trial_obj, w) = loss.evaluate(&trial);
            if trial_obj <= obj + 1e-14 * obj.abs().max(1.0) {
                accepted = Some((trial, trial_obj, w));
                break;
            }
            t *= 0.5;
        }
        let Some((new_resid, new_obj, new_w)) = accepted else {
            break;
        };
        let mut new_beta = beta.clone();
        axpy(-t, &dir, &mut new_beta);
        let new_grad = data.x().tr_mul_vec(&new_w);

        // BB step sizes in the metric of G: sᵀGs = ‖x s‖²/n = t²‖x d‖²/n.
        let s: Vec<f64> = new_beta.iter().zip(&beta).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = new_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        let ss = t * t * dot(&xd, &xd) / n;
        let yy = dot(&yv, &gram.solve(&yv));
        step = if sy > 0.0 && yy > 0.0 { (sy / yy).min(ss / sy).min(MAX_STEP) } else { 1.0 };

        beta = new_beta;
        resid = new_resid;
        obj = new_obj;
        grad = new_grad;
        gnorm = norm2(&grad);
    }

    Ok(QuantileFit {
        beta,
        alpha,
        bandwidth: h,
        diagnostics: FitDiagnostics {
            iterations,
            converged: gnorm <= control.tol,
            final_gradient_norm: gnorm,
            objective: obj,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    fn intercept_only(y: Vec<f64>) -> Dataset {
        let n = y.len();
        Dataset::new(Matrix::from_columns(&[vec![1.0; n]]), y).unwrap()
    }

    #[test]
    fn check_loss_values() {
        assert_eq!(check_loss(2.0, 0.5), 1.0);
        assert!((check_loss(-1.0, 0.1) - 0.9).abs() < 1e-15);
        assert_eq!(check_loss(0.0, 0.3), 0.0);
    }

    #[test]
    fn smoothed_loss_tends_to_check_loss() {
        for &u in &[-2.0, -0.3, 0.7, 3.0] {
            assert!((smoothed_check_loss(u, 0.2, 1e-4) - check_loss(u, 0.2)).abs() < 1e-4);
        }
    }

    #[test]
    fn smoothed_loss_derivative_matches_finite_difference() {
        let (a, h) = (0.3, 0.7);
        for &u in &[-2.0, -0.1, 0.0, 0.5, 4.0] {
            let e = 1e-6;
            let fd = (smoothed_check_loss(u + e, a, h) - smoothed_check_loss(u - e, a, h)) / (2.0 * e);
            let exact = a - normal::cdf(-u / h);
            assert!((fd - exact).abs() < 1e-8);
        }
    }

    #[test]
    fn median_of_five() {
        let data = intercept_only(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let ctl = SolverControl::default().with_tol(1e-10);
        let fit = smoothed_qr_fit(&data, 0.5, Some(0.01), &ctl, None).unwrap();
        assert!(fit.diagnostics.converged);
        assert!((fit.beta[0] - 3.0).abs() <= 0.02, "{}", fit.beta[0]);
    }

    // Smoothing shifts the zero-residual solution: the intercept solves
    // Φ((b − c)/h) = α, so b = c + h·z_α.
    #[test]
    fn constant_response() {
        let x = Matrix::from_columns(&[vec![1.0; 6], vec![0.1, 0.5, 0.9, 1.3, 0.2, 0.7]]);
        let data = Dataset::new(x, vec![4.0; 6]).unwrap();
        let ctl = SolverControl::default().with_tol(1e-10);
        let fit = smoothed_qr_fit(&data, 0.25, None, &ctl, None).unwrap();
        let expected = 4.0 + fit.bandwidth * normal::quantile(0.25);
        assert!((fit.beta[0] - expected).abs() < 1e-8, "{}", fit.beta[0]);
        assert!(fit.beta[1].abs() < 1e-8);

        let fit = smoothed_qr_fit(&data, 0.5, None, &ctl, None).unwrap();
        assert!((fit.beta[0] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn rank_deficient_design() {
        let x = Matrix::from_columns(&[vec![1.0; 4], vec![2.0; 4]]);
        let data = Dataset::new(x, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let err = smoothed_qr_fit(&data, 0.5, None, &SolverControl::default(), None).unwrap_err();
        assert!(matches!(err, Error::DegenerateDesign(_)));
    }

    #[test]
    fn iteration_cap_flags_non_convergence() {
        let y: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64).collect();
        let data = intercept_only(y);
        let ctl = SolverControl::default().with_tol(1e-14).with_max_iter(1);
        let fit = smoothed_qr_fit(&data, 0.3, Some(0.05), &ctl, None).unwrap();
        assert!(!fit.diagnostics.converged);
        assert!(fit.diagnostics.ensure_converged().is_err());
    }

    #[test]
    fn bad_level() {
        let data = intercept_only(vec![1.0, 2.0]);
        assert!(smoothed_qr_fit(&data, 1.0, None, &SolverControl::default(), None).is_err());
    }
}
