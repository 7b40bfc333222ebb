//! Non-crossing ES regression: fitted ES never exceeds the fitted quantile.
//!
//! The least-squares version is the QP
//!
//! ```text
//! minimize ½θᵀCθ + dᵀθ  subject to  xθ ≤ xβ̂,
//! C = (α²/n) xᵀx,   d = −(α/n) xᵀẐ.
//! ```
//!
//! The Huber version runs IRLS where each reweighted problem is the same QP
//! with weights `1/(1 + w_i)`, `w_i = (|ω_i|/τ − 1)₊`.

mod qp;

pub use qp::{qp_solve, KktResiduals, QpProblem, QpSolution};

use crate::data::{Dataset, FitDiagnostics, SolverControl};
use crate::error::{Error, Result};
use crate::es::{generate_response, EsFit, EsMethod};
use crate::huber::{calibrate_tau, huber_loss, huber_psi};
use crate::linalg::{norm2, Matrix};

/// Tolerance above which `x_iᵀθ > x_iᵀβ` counts as a crossing.
pub const CROSSING_TOL: f64 = 1e-10;

/// `#{i : x_iᵀθ > x_iᵀβ + 1e-10}`.
pub fn count_crossings(data: &Dataset, beta: &[f64], theta: &[f64]) -> usize {
    data.fitted(theta)
        .iter()
        .zip(data.fitted(beta))
        .filter(|(e, q)| **e > q + CROSSING_TOL)
        .count()
}

/// Lowers the intercept of `theta` by `max violation + 1` when any fitted ES
/// exceeds the fitted quantile, giving a strictly feasible point.
pub fn feasible_start(data: &Dataset, beta: &[f64], theta: &[f64]) -> Vec<f64> {
    let worst = data
        .fitted(theta)
        .iter()
        .zip(data.fitted(beta))
        .map(|(e, q)| e - q)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out = theta.to_vec();
    if worst >= 0.0 {
        out[0] -= worst + 1.0;
    }
    out
}

/// Weighted non-crossing QP with observation weights `v`.
fn weighted_problem(data: &Dataset, z: &[f64], beta: &[f64], alpha: f64, v: Option<&[f64]>) -> Result<QpProblem> {
    let n = data.n() as f64;
    let mut c = data.x().weighted_gram(v);
    c.scale(alpha * alpha / n);
    let vz: Vec<f64> = match v {
        Some(v) => z.iter().zip(v).map(|(z, v)| z * v).collect(),
        None => z.to_vec(),
    };
    let d: Vec<f64> = data.x().tr_mul_vec(&vz).into_iter().map(|s| -alpha * s / n).collect();
    QpProblem::new(c, d, data.x().clone(), data.fitted(beta))
}

fn check_inputs(data: &Dataset, beta: &[f64], alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if beta.len() != data.p() {
        return Err(Error::invalid("beta has the wrong length"));
    }
    Ok(())
}

/// Constrained least-squares ES fit.
pub fn nc_es_ls_fit(data: &Dataset, beta: &[f64], alpha: f64) -> Result<EsFit> {
    check_inputs(data, beta, alpha)?;
    let z = generate_response(data, beta, alpha);
    let prob = weighted_problem(data, &z, beta, alpha, None).map_err(|e| e.into_degenerate("non-crossing QP"))?;
    let sol = qp_solve(&prob).map_err(|e| e.into_degenerate("non-crossing QP"))?;
    let kkt = prob.kkt(&sol.theta, &sol.active_set, &sol.dual);
    debug_assert!(kkt.max() <= 1e-8 * (1.0 + norm2(&prob.d)), "KKT residuals {kkt:?}");
    Ok(EsFit {
        crossings: count_crossings(data, beta, &sol.theta),
        alpha,
        method: EsMethod::NcLs,
        tau: None,
        diagnostics: FitDiagnostics {
            iterations: sol.iterations,
            converged: true,
            final_gradient_norm: kkt.stationarity,
            objective: sol.objective,
        },
        theta: sol.theta,
    })
}

/// IRLS weights `1/(1 + w_i)` with `w_i = (|ω_i|/τ − 1)₊`; equal to
/// `min(1, τ/|ω_i|)`.
pub fn irls_weights(omega: &[f64], tau: f64) -> Vec<f64> {
    omega
        .iter()
        .map(|w| {
            let excess = (w.abs() / tau - 1.0).max(0.0);
            1.0 / (1.0 + excess)
        })
        .collect()
}

/// One IRLS-QP step at fixed `τ` from `theta`.
pub fn nc_huber_step(data: &Dataset, z: &[f64], beta: &[f64], alpha: f64, tau: f64, theta: &[f64]) -> Result<QpSolution> {
    let omega: Vec<f64> = z.iter().zip(data.fitted(theta)).map(|(z, f)| z - alpha * f).collect();
    let v = irls_weights(&omega, tau);
    let prob = weighted_problem(data, z, beta, alpha, Some(&v)).map_err(|e| e.into_degenerate("IRLS-QP"))?;
    qp_solve(&prob).map_err(|e| e.into_degenerate("IRLS-QP"))
}

/// `(1/n) Σ ℓ_τ(Ẑ_i − α x_iᵀθ)`.
pub fn huber_objective(data: &Dataset, z: &[f64], alpha: f64, tau: f64, theta: &[f64]) -> f64 {
    let f = data.fitted(theta);
    z.iter().zip(f).map(|(z, f)| huber_loss(z - alpha * f, tau)).sum::<f64>() / data.n() as f64
}

/// Constrained adaptive Huber ES fit by IRLS-QP, started at the constrained
/// least-squares fit. `τ` is recalibrated on the current residuals at every
/// step. Iterates until the relative change in `θ` is at most `control.tol`.
pub fn nc_es_huber_fit(data: &Dataset, beta: &[f64], alpha: f64, control: &SolverControl) -> Result<EsFit> {
    control.validate()?;
    let start = nc_es_ls_fit(data, beta, alpha)?;
    let z = generate_response(data, beta, alpha);
    let mut theta = start.theta.clone();
    let mut tau = f64::INFINITY;
    let mut last: Option<QpSolution> = None;
    let mut converged = false;
    let mut iterations = 0;
    let max_outer = control.max_iter.min(1000);

    while iterations < max_outer {
        iterations += 1;
        let omega: Vec<f64> = z.iter().zip(data.fitted(&theta)).map(|(z, f)| z - alpha * f).collect();
        if omega.iter().all(|&w| w == 0.0) {
            converged = true;
            break;
        }
        tau = calibrate_tau(&omega, data.p())?.tau;
        let sol = nc_huber_step(data, &z, beta, alpha, tau, &theta)?;
        let change = norm2(&sol.theta.iter().zip(&theta).map(|(a, b)| a - b).collect::<Vec<_>>());
        let done = change <= control.tol * (1.0 + norm2(&theta));
        theta = sol.theta.clone();
        last = Some(sol);
        if done {
            converged = true;
            break;
        }
    }

    let Some(sol) = last else {
        let mut fit = start;
        fit.method = EsMethod::NcHuber;
        fit.tau = Some(f64::INFINITY);
        return Ok(fit);
    };
    let stationarity = huber_lagrangian_gradient(data, &z, alpha, tau, &theta, &sol);
    Ok(EsFit {
        crossings: count_crossings(data, beta, &theta),
        alpha,
        method: EsMethod::NcHuber,
        tau: Some(tau),
        diagnostics: FitDiagnostics {
            iterations,
            converged,
            final_gradient_norm: stationarity,
            objective: huber_objective(data, &z, alpha, tau, &theta),
        },
        theta,
    })
}

/// `‖−(α/n) Σ ψ_τ(ω_i) x_i + Σ_{active} λ_i x_i‖₂`, zero at a constrained
/// Huber stationary point.
fn huber_lagrangian_gradient(data: &Dataset, z: &[f64], alpha: f64, tau: f64, theta: &[f64], sol: &QpSolution) -> f64 {
    let n = data.n() as f64;
    let psi: Vec<f64> = z
        .iter()
        .zip(data.fitted(theta))
        .map(|(z, f)| -alpha * huber_psi(z - alpha * f, tau) / n)
        .collect();
    let mut g = data.x().tr_mul_vec(&psi);
    let x: &Matrix = data.x();
    for (&i, &l) in sol.active_set.iter().zip(&sol.dual) {
        for (j, gj) in g.iter_mut().enumerate() {
            *gj += l * x[(i, j)];
        }
    }
    norm2(&g)
}
