//! Huber loss, data-driven calibration of the robustification level `τ`,
//! and the adaptive Huber ES regression.
//!
//! The robust second stage minimizes `(1/n) Σ ℓ_τ(Ẑ_i − α x_iᵀθ)` where
//! `ℓ_τ` is quadratic on `[−τ, τ]` and linear outside. `τ` is chosen so that
//! the censored second moment of the current residuals matches
//! `(p + ln n)/n`, and the two steps alternate until `θ` settles.

use serde::Serialize;

use crate::data::{Dataset, FitDiagnostics, SolverControl};
use crate::error::{Error, Result};
use crate::es::{es_ls_fit, generate_response, EsFit, EsMethod};
use crate::linalg::{dot, norm2, Cholesky, Matrix};
use crate::noncross::count_crossings;

pub fn huber_loss(u: f64, tau: f64) -> f64 {
    let a = u.abs();
    if a <= tau {
        0.5 * u * u
    } else {
        tau * a - 0.5 * tau * tau
    }
}

/// Derivative of [`huber_loss`]: `sign(u) · min(|u|, τ)`.
pub fn huber_psi(u: f64, tau: f64) -> f64 {
    u.clamp(-tau, tau)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TauCalibration {
    pub tau: f64,
    pub target: f64,
    pub residual_count_nonzero: usize,
    /// Knot comparisons made while locating the root.
    pub iterations: usize,
}

/// Censored moment `f(τ) = (1/n) Σ min(ω_i², τ²)/τ²`.
pub fn censored_moment(residuals: &[f64], tau: f64) -> f64 {
    let t2 = tau * tau;
    residuals.iter().map(|w| (w * w).min(t2) / t2).sum::<f64>() / residuals.len() as f64
}

/// Solves `f(τ) = (p + ln n)/n`.
pub fn calibrate_tau(residuals: &[f64], p: usize) -> Result<TauCalibration> {
    let n = residuals.len() as f64;
    calibrate_tau_with_target(residuals, (p as f64 + n.ln()) / n)
}

/// Solves `f(τ) = target` for the non-increasing censored moment `f`.
///
/// `f` equals `k/n` (k nonzero residuals) as `τ → 0` and decays to zero, so a
/// root exists iff `k > n · target`. Between consecutive sorted `|ω|` knots
/// `f(τ) = (P/τ² + m)/n` with `P` the sum of the smaller squares and `m` the
/// number of larger residuals, so after a binary search over knots the root
/// is available in closed form.
pub fn calibrate_tau_with_target(residuals: &[f64], target: f64) -> Result<TauCalibration> {
    if residuals.is_empty() || residuals.iter().any(|w| !w.is_finite()) {
        return Err(Error::invalid("residuals must be non-empty and finite"));
    }
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::invalid(format!("calibration target must lie in (0, 1), got {target}")));
    }
    let n = residuals.len();
    let nt = n as f64 * target;
    let mut s: Vec<f64> = residuals.iter().map(|w| w.abs()).filter(|&a| a > 0.0).collect();
    let k = s.len();
    if k as f64 <= nt {
        return Err(Error::NoSolution { nonzero: k, required: nt });
    }
    s.sort_by(f64::total_cmp);
    let mut prefix = Vec::with_capacity(k + 1);
    prefix.push(0.0);
    for &a in &s {
        prefix.push(prefix.last().unwrap() + a * a);
    }

    // n·f at knot j, where residuals 0..=j are inside the quadratic zone.
    let nf_at = |j: usize| prefix[j + 1] / (s[j] * s[j]) + (k - j - 1) as f64;
    let mut iterations = 0;
    let j = {
        let (mut lo, mut hi) = (0usize, k);
        while lo < hi {
            iterations += 1;
            let mid = (lo + hi) / 2;
            if nf_at(mid) > nt {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        lo
    };
    let tau = if j == k {
        // Root beyond the largest residual, where n·f = P_k/τ².
        (prefix[k] / nt).sqrt()
    } else {
        // j ≥ 1 because n·f(s_0) = k > nt.
        (prefix[j] / (nt - (k - j) as f64)).sqrt()
    };
    Ok(TauCalibration { tau, target, residual_count_nonzero: k, iterations })
}

#[derive(Debug, Clone, Serialize)]
pub struct HuberRegFit {
    pub theta: Vec<f64>,
    pub tau: f64,
    pub diagnostics: FitDiagnostics,
    /// Whether the IRLS fallback was needed.
    pub used_irls: bool,
    /// Every accepted step kept the objective non-increasing.
    pub monotone: bool,
}

struct HuberProblem<'a> {
    x: &'a Matrix,
    z: &'a [f64],
    alpha: f64,
    tau: f64,
}

impl HuberProblem<'_> {
    fn residuals(&self, theta: &[f64]) -> Vec<f64> {
        let f = self.x.mul_vec(theta);
        self.z.iter().zip(f).map(|(z, f)| z - self.alpha * f).collect()
    }

    fn objective(&self, r: &[f64]) -> f64 {
        r.iter().map(|&u| huber_loss(u, self.tau)).sum::<f64>() / r.len() as f64
    }

    /// Gradient in `θ`: `−(α/n) Σ ψ_τ(r_i) x_i`.
    fn gradient(&self, r: &[f64]) -> Vec<f64> {
        let c = -self.alpha / r.len() as f64;
        let psi: Vec<f64> = r.iter().map(|&u| c * huber_psi(u, self.tau)).collect();
        self.x.tr_mul_vec(&psi)
    }
}

/// Minimizes `(1/n) Σ ℓ_τ(z_i − α x_iᵀθ)`.
///
/// Barzilai–Borwein gradient descent with step halving; if a step cannot
/// decrease the objective or the budget runs out, IRLS with weights
/// `min(1, τ/|r_i|)` takes over. Stops when the score norm is at most `tol`.
pub fn huber_reg_fit(
    x: &Matrix,
    z: &[f64],
    alpha: f64,
    tau: f64,
    control: &SolverControl,
    init: Option<&[f64]>,
) -> Result<HuberRegFit> {
    control.validate()?;
    if !(tau > 0.0) || tau.is_nan() {
        return Err(Error::invalid(format!("tau must be positive, got {tau}")));
    }
    if z.len() != x.nrows() {
        return Err(Error::invalid("response length does not match design"));
    }
    let p = x.ncols();
    let gram = Cholesky::new(&x.weighted_gram(None)).map_err(|e| e.into_degenerate("Huber regression"))?;
    let mut theta = match init {
        Some(t) if t.len() == p => t.to_vec(),
        Some(_) => return Err(Error::invalid("init has the wrong length")),
        None => gram.solve(&x.tr_mul_vec(z)).into_iter().map(|v| v / alpha).collect(),
    };

    let prob = HuberProblem { x, z, alpha, tau };
    let mut r = prob.residuals(&theta);
    let mut obj = prob.objective(&r);
    let mut grad = prob.gradient(&r);
    let mut gnorm = norm2(&grad);
    let mut iterations = 0;
    let mut monotone = true;
    let mut step: f64 = 1.0 / (alpha * alpha);
    let mut stalled = false;

    while gnorm > control.tol && iterations < control.max_iter {
        iterations += 1;
        let xg = x.mul_vec(&grad);
        let mut t = step;
        let mut accepted = None;
        for _ in 0..60 {
            // θ − t·g moves residuals by +α·t·x g.
            let trial: Vec<f64> = r.iter().zip(&xg).map(|(r, d)| r + alpha * t * d).collect();
            let o = prob.objective(&trial);
            if o <= obj + 1e-14 * obj.abs().max(1.0) {
                accepted = Some((trial, o));
                break;
            }
            t *= 0.5;
        }
        let Some((new_r, new_obj)) = accepted else {
            stalled = true;
            break;
        };
        monotone &= new_obj <= obj + 1e-12 * obj.abs().max(1.0);
        let new_theta: Vec<f64> = theta.iter().zip(&grad).map(|(a, g)| a - t * g).collect();
        let new_grad = prob.gradient(&new_r);
        let s: Vec<f64> = new_theta.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = new_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let (sy, yy) = (dot(&s, &y), dot(&y, &y));
        step = if sy > 0.0 && yy > 0.0 { (sy / yy).min(dot(&s, &s) / sy) } else { step * 2.0 };
        theta = new_theta;
        r = new_r;
        obj = new_obj;
        grad = new_grad;
        gnorm = norm2(&grad);
    }

    let mut used_irls = false;
    if gnorm > control.tol && (stalled || iterations >= control.max_iter) {
        used_irls = true;
        let mut irls_iter = 0;
        while gnorm > control.tol && irls_iter < control.max_iter {
            irls_iter += 1;
            let w: Vec<f64> = r.iter().map(|u| if u.abs() <= tau { 1.0 } else { tau / u.abs() }).collect();
            let chol = Cholesky::new(&x.weighted_gram(Some(&w))).map_err(|e| e.into_degenerate("IRLS step"))?;
            let wz: Vec<f64> = z.iter().zip(&w).map(|(z, w)| z * w).collect();
            let cand: Vec<f64> = chol.solve(&x.tr_mul_vec(&wz)).into_iter().map(|v| v / alpha).collect();
            let cr = prob.residuals(&cand);
            let co = prob.objective(&cr);
            if co > obj + 1e-12 * obj.abs().max(1.0) {
                break;
            }
            let cn = norm2(&prob.gradient(&cr));
            let progress = obj - co;
            theta = cand;
            r = cr;
            obj = co;
            gnorm = cn;
            if progress <= 0.0 {
                break;
            }
        }
        iterations += irls_iter;
    }

    Ok(HuberRegFit {
        theta,
        tau,
        diagnostics: FitDiagnostics {
            iterations,
            converged: gnorm <= control.tol,
            final_gradient_norm: gnorm,
            objective: obj,
        },
        used_irls,
        monotone,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceStep {
    pub tau: f64,
    pub theta: Vec<f64>,
    pub objective: f64,
    pub inner_monotone: bool,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct RobustEsTrace {
    pub steps: Vec<TraceStep>,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveHuberOptions {
    pub max_outer: usize,
    /// Relative change in `θ` that ends the alternation; `None` uses `control.tol`.
    pub outer_tol: Option<f64>,
    /// Lower bound applied to every calibrated `τ`.
    pub tau_floor: Option<f64>,
}

impl Default for AdaptiveHuberOptions {
    fn default() -> Self {
        Self { max_outer: 50, outer_tol: None, tau_floor: None }
    }
}

/// Adaptive Huber ES regression with default options.
pub fn adaptive_huber_es(
    data: &Dataset,
    beta: &[f64],
    alpha: f64,
    control: &SolverControl,
) -> Result<(EsFit, RobustEsTrace)> {
    adaptive_huber_es_with(data, beta, alpha, control, &AdaptiveHuberOptions::default())
}

/// Alternates `τ` calibration on the current residuals `Ẑ − αxθ` with a
/// Huber fit at that `τ`, starting from the least-squares ES fit.
pub fn adaptive_huber_es_with(
    data: &Dataset,
    beta: &[f64],
    alpha: f64,
    control: &SolverControl,
    options: &AdaptiveHuberOptions,
) -> Result<(EsFit, RobustEsTrace)> {
    let ls = es_ls_fit(data, beta, alpha)?;
    let z = generate_response(data, beta, alpha);
    let outer_tol = options.outer_tol.unwrap_or(control.tol);
    let mut theta = ls.theta.clone();
    let mut trace = RobustEsTrace::default();
    let mut last: Option<HuberRegFit> = None;
    let mut iterations = 0;

    for _ in 0..options.max_outer.max(1) {
        iterations += 1;
        let fitted = data.fitted(&theta);
        let omega: Vec<f64> = z.iter().zip(&fitted).map(|(z, f)| z - alpha * f).collect();
        if omega.iter().all(|&w| w == 0.0) {
            let mut fit = ls;
            fit.method = EsMethod::Huber;
            fit.tau = Some(f64::INFINITY);
            trace.converged = true;
            return Ok((fit, trace));
        }
        let mut tau = calibrate_tau(&omega, data.p())?.tau;
        if let Some(floor) = options.tau_floor {
            tau = tau.max(floor);
        }
        let fit = huber_reg_fit(data.x(), &z, alpha, tau, control, Some(&theta))?;
        let change = norm2(&fit.theta.iter().zip(&theta).map(|(a, b)| a - b).collect::<Vec<_>>());
        let done = change <= outer_tol * (1.0 + norm2(&theta));
        trace.steps.push(TraceStep {
            tau,
            theta: fit.theta.clone(),
            objective: fit.diagnostics.objective,
            inner_monotone: fit.monotone,
        });
        theta = fit.theta.clone();
        last = Some(fit);
        if done {
            trace.converged = true;
            break;
        }
    }

    let last = last.expect("at least one outer iteration runs");
    let diagnostics = FitDiagnostics {
        iterations,
        converged: trace.converged && last.diagnostics.converged,
        final_gradient_norm: last.diagnostics.final_gradient_norm,
        objective: last.diagnostics.objective,
    };
    Ok((
        EsFit {
            crossings: count_crossings(data, beta, &theta),
            theta,
            alpha,
            method: EsMethod::Huber,
            tau: Some(last.tau),
            diagnostics,
        },
        trace,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn loss_and_psi_examples() {
        assert_eq!(huber_loss(1.0, 2.0), 0.5);
        assert_eq!(huber_psi(1.0, 2.0), 1.0);
        assert_eq!(huber_loss(3.0, 1.0), 2.5);
        assert_eq!(huber_psi(3.0, 1.0), 1.0);
        assert_eq!(huber_psi(-3.0, 1.0), -1.0);
    }

    #[test]
    fn psi_is_loss_derivative() {
        let tau = 1.3;
        let mut pts: Vec<f64> = (0..46).map(|i| -4.0 + 8.0 * i as f64 / 45.0).collect();
        pts.extend([tau + 1e-6, tau - 1e-6, -tau + 1e-6, -tau - 1e-6]);
        for u in pts {
            let e = 1e-7;
            let fd = (huber_loss(u + e, tau) - huber_loss(u - e, tau)) / (2.0 * e);
            assert!((fd - huber_psi(u, tau)).abs() < 1e-6, "u = {u}");
        }
    }

    #[test]
    fn calibration_examples() {
        let c = calibrate_tau_with_target(&[1.0, 1.0, 1.0, 1.0], 0.25).unwrap();
        assert!((c.tau - 2.0).abs() < 1e-12);
        let c3 = calibrate_tau_with_target(&[3.0, 3.0, 3.0, 3.0], 0.25).unwrap();
        assert!((c3.tau - 6.0).abs() < 1e-12);
        assert!(matches!(calibrate_tau_with_target(&[0.0, 0.0, 1.0, 0.0], 0.25), Err(Error::NoSolution { .. })));
    }

    /// Root of the censored equation by scanning a fine log grid.
    fn grid_root(w: &[f64], target: f64) -> f64 {
        let lo = w.iter().map(|v| v.abs()).filter(|&a| a > 0.0).fold(f64::INFINITY, f64::min) * 1e-3;
        let hi = w.iter().map(|v| v.abs()).fold(0.0, f64::max) * 1e3;
        let m = 100_000;
        let (a, b) = (lo.ln(), hi.ln());
        let mut prev_t = lo;
        let mut prev_f = censored_moment(w, lo) - target;
        for i in 1..=m {
            let t = (a + (b - a) * i as f64 / m as f64).exp();
            let f = censored_moment(w, t) - target;
            if prev_f > 0.0 && f <= 0.0 {
                // Linear interpolation inside the bracketing cell.
                return prev_t + (t - prev_t) * prev_f / (prev_f - f);
            }
            prev_t = t;
            prev_f = f;
        }
        panic!("no sign change");
    }

    #[test]
    fn calibration_matches_grid_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w: Vec<f64> = (0..200).map(|_| rng.random_range(-3.0..3.0f64).powi(3)).collect();
        let c = calibrate_tau(&w, 5).unwrap();
        let g = grid_root(&w, c.target);
        assert!((c.tau - g).abs() <= 1e-4 * g, "{} vs {g}", c.tau);
        assert!((censored_moment(&w, c.tau) - c.target).abs() <= 1e-10);
    }

    #[test]
    fn doubling_sample_raises_tau() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w: Vec<f64> = (0..100).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut ww = w.clone();
        ww.extend(&w);
        assert!(calibrate_tau(&ww, 4).unwrap().tau > calibrate_tau(&w, 4).unwrap().tau);
    }

    proptest! {
        #[test]
        fn calibration_root_properties(w in prop::collection::vec(-50.0f64..50.0, 30..120), p in 1usize..4) {
            let Ok(c) = calibrate_tau(&w, p) else { return Ok(()); };
            prop_assert!((censored_moment(&w, c.tau) - c.target).abs() <= 1e-10);
            prop_assert!(c.residual_count_nonzero as f64 > w.len() as f64 * c.target);
            let e = 1e-6 * c.tau;
            if w.iter().any(|v| v.abs() > c.tau) {
                prop_assert!(censored_moment(&w, c.tau - e) > c.target);
                prop_assert!(censored_moment(&w, c.tau + e) < c.target);
            }
        }

        #[test]
        fn calibration_is_scale_equivariant(w in prop::collection::vec(-5.0f64..5.0, 40..80), lam in 0.01f64..100.0) {
            let Ok(a) = calibrate_tau(&w, 2) else { return Ok(()); };
            let scaled: Vec<f64> = w.iter().map(|v| v * lam).collect();
            let b = calibrate_tau(&scaled, 2).unwrap();
            prop_assert!((b.tau - lam * a.tau).abs() <= 1e-10 * b.tau);
        }
    }

    #[test]
    fn huber_intercept_example() {
        let x = Matrix::from_columns(&[vec![1.0; 4]]);
        let ctl = SolverControl::default().with_tol(1e-12);
        // α must lie in (0, 1) elsewhere, but the solver itself accepts α = 1.
        let fit = huber_reg_fit(&x, &[-1.0, 0.0, 1.0, 10.0], 1.0, 1.0, &ctl, None).unwrap();
        assert!((fit.theta[0] - 0.5).abs() < 1e-9, "{}", fit.theta[0]);

        let fit = huber_reg_fit(&x, &[-3.0, -1.0, 1.0, 3.0], 0.3, 0.7, &ctl, None).unwrap();
        assert!(fit.theta[0].abs() < 1e-9);
    }

    #[test]
    fn huge_tau_gives_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 60;
        let cols = vec![vec![1.0; n], (0..n).map(|_| rng.random_range(0.0..2.0)).collect()];
        let x = Matrix::from_columns(&cols);
        let z: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..1.0)).collect();
        let alpha = 0.2;
        let ls: Vec<f64> = Cholesky::new(&x.weighted_gram(None))
            .unwrap()
            .solve(&x.tr_mul_vec(&z))
            .into_iter()
            .map(|v| v / alpha)
            .collect();
        let fit = huber_reg_fit(&x, &z, alpha, 1e6, &SolverControl::default().with_tol(1e-12), Some(&[0.0, 0.0])).unwrap();
        for (a, b) in fit.theta.iter().zip(&ls) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn huber_minimum_beats_perturbations() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 80;
        let cols = vec![vec![1.0; n], (0..n).map(|_| rng.random_range(0.0..1.5)).collect()];
        let x = Matrix::from_columns(&cols);
        let z: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0f64).powi(5) * 20.0).collect();
        let (alpha, tau) = (0.1, 0.5);
        let fit = huber_reg_fit(&x, &z, alpha, tau, &SolverControl::default(), None).unwrap();
        assert!(fit.diagnostics.converged && fit.monotone);
        let prob = HuberProblem { x: &x, z: &z, alpha, tau };
        let best = prob.objective(&prob.residuals(&fit.theta));
        for _ in 0..20 {
            let d: Vec<f64> = fit.theta.iter().map(|t| t + rng.random_range(-0.1..0.1)).collect();
            assert!(prob.objective(&prob.residuals(&d)) >= best - 1e-12);
        }
    }

    #[test]
    fn huge_tau_floor_reproduces_ls() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 300;
        let cov: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(0.0..1.5), rng.random_range(0.0..1.5)]).collect();
        let y: Vec<f64> = cov.iter().map(|r| r[0] - r[1] + (1.0 + r[0]) * rng.random_range(-2.0..2.0)).collect();
        let data = Dataset::with_intercept(&cov, y).unwrap();
        let beta = [-1.0, 1.0, -1.0];
        let ls = es_ls_fit(&data, &beta, 0.2).unwrap();
        let opts = AdaptiveHuberOptions { tau_floor: Some(1e12), ..Default::default() };
        let (fit, _) = adaptive_huber_es_with(&data, &beta, 0.2, &SolverControl::default(), &opts).unwrap();
        for (a, b) in fit.theta.iter().zip(&ls.theta) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_residuals_return_ls_with_infinite_tau() {
        let data = Dataset::with_intercept(&[vec![0.0], vec![1.0], vec![2.0]], vec![1.0, 2.0, 3.0]).unwrap();
        let (fit, trace) = adaptive_huber_es(&data, &[1.0, 1.0], 0.5, &SolverControl::default()).unwrap();
        assert_eq!(fit.tau, Some(f64::INFINITY));
        assert!(trace.converged);
        assert!((fit.theta[0] - 1.0).abs() < 1e-12 && (fit.theta[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adaptive_fit_is_scale_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 400;
        let cov: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(0.0..1.5)]).collect();
        let y: Vec<f64> = cov.iter().map(|r| r[0] + (0.5 + r[0]) * rng.random_range(-1.0..1.0f64).powi(3) * 4.0).collect();
        let data = Dataset::with_intercept(&cov, y.clone()).unwrap();
        let beta = [-0.5, 0.4];
        let ctl = SolverControl::default().with_tol(1e-10);
        let (base, trace) = adaptive_huber_es(&data, &beta, 0.1, &ctl).unwrap();
        assert!(trace.converged);
        assert!(trace.steps.iter().all(|s| s.inner_monotone));
        for c in [0.1, 10.0] {
            let scaled = data.with_response(y.iter().map(|v| c * v).collect()).unwrap();
            let b2: Vec<f64> = beta.iter().map(|b| c * b).collect();
            let (fit, _) = adaptive_huber_es(&scaled, &b2, 0.1, &ctl).unwrap();
            for (a, b) in fit.theta.iter().zip(&base.theta) {
                assert!((a - c * b).abs() <= 1e-4 * (c * b).abs().max(c), "{a} vs {}", c * b);
            }
        }
    }
}
