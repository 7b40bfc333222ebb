//! Second stage: least-squares expected-shortfall regression.
//!
//! Given a first-stage quantile fit `β̂`, the generated response
//!
//! ```text
//! Ẑ_i = (y_i − x_iᵀβ̂) 1(y_i ≤ x_iᵀβ̂) + α x_iᵀβ̂
//! ```
//!
//! has conditional mean `α x_iᵀθ*`, so `θ̂` is the least-squares regression of
//! `Ẑ/α` on `x`. Because the score is orthogonal in `β`, first-stage error
//! only enters at second order.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FitDiagnostics};
use crate::error::{Error, Result};
use crate::linalg::{norm2, Cholesky};
use crate::noncross::count_crossings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EsMethod {
    Ls,
    Huber,
    NcLs,
    NcHuber,
    /// Benchmark fit that knows the true quantile coefficients.
    Oracle,
}

impl EsMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            EsMethod::Ls => "ls",
            EsMethod::Huber => "huber",
            EsMethod::NcLs => "nc-ls",
            EsMethod::NcHuber => "nc-huber",
            EsMethod::Oracle => "oracle",
        }
    }

    pub fn is_constrained(self) -> bool {
        matches!(self, EsMethod::NcLs | EsMethod::NcHuber)
    }
}

impl std::fmt::Display for EsMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EsMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "ls" => Ok(EsMethod::Ls),
            "huber" | "ah" => Ok(EsMethod::Huber),
            "nc-ls" => Ok(EsMethod::NcLs),
            "nc-huber" => Ok(EsMethod::NcHuber),
            "oracle" => Ok(EsMethod::Oracle),
            other => Err(Error::invalid(format!("unknown method `{other}`"))),
        }
    }
}

/// Fitted ES regression coefficients.
#[derive(Debug, Clone, Serialize)]
pub struct EsFit {
    pub theta: Vec<f64>,
    pub alpha: f64,
    pub method: EsMethod,
    /// Final robustification level; `None` for least-squares fits and
    /// `Some(inf)` when every residual was zero.
    pub tau: Option<f64>,
    /// Observations whose fitted ES exceeds the fitted quantile.
    pub crossings: usize,
    pub diagnostics: FitDiagnostics,
}

/// `Ẑ_i = (y_i − x_iᵀβ) 1(y_i ≤ x_iᵀβ) + α x_iᵀβ`. Ties count as below.
pub fn generate_response(data: &Dataset, beta: &[f64], alpha: f64) -> Vec<f64> {
    data.fitted(beta)
        .into_iter()
        .zip(data.y())
        .map(|(q, &y)| if y <= q { y - q + alpha * q } else { alpha * q })
        .collect()
}

fn check_inputs(data: &Dataset, beta: &[f64], alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if beta.len() != data.p() {
        return Err(Error::invalid(format!("beta has length {}, expected {}", beta.len(), data.p())));
    }
    Ok(())
}

/// Closed-form two-step estimator
/// `θ̂ = β̂ + (Σ x_i x_iᵀ)⁻¹ α⁻¹ Σ (y_i − x_iᵀβ̂) x_i 1(y_i ≤ x_iᵀβ̂)`.
pub fn es_ls_fit(data: &Dataset, beta: &[f64], alpha: f64) -> Result<EsFit> {
    check_inputs(data, beta, alpha)?;
    let chol = Cholesky::new(&data.x().weighted_gram(None))
        .map_err(|e| e.into_degenerate("second-stage least squares"))?;

    let fitted = data.fitted(beta);
    let tail: Vec<f64> = data
        .y()
        .iter()
        .zip(&fitted)
        .map(|(&y, &q)| if y <= q { (y - q) / alpha } else { 0.0 })
        .collect();
    let correction = chol.solve(&data.x().tr_mul_vec(&tail));
    let theta: Vec<f64> = beta.iter().zip(&correction).map(|(b, c)| b + c).collect();

    let z = generate_response(data, beta, alpha);
    if cfg!(debug_assertions) {
        let scaled: Vec<f64> = z.iter().map(|v| v / alpha).collect();
        let regression = chol.solve(&data.x().tr_mul_vec(&scaled));
        let scale = 1.0 + norm2(&theta);
        let gap = theta.iter().zip(&regression).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        debug_assert!(gap <= 1e-8 * scale, "closed form and regression form differ by {gap}");
    }

    let (objective, score) = ls_objective_and_score(data, &z, &theta, alpha);
    Ok(EsFit {
        crossings: count_crossings(data, beta, &theta),
        theta,
        alpha,
        method: EsMethod::Ls,
        tau: None,
        diagnostics: FitDiagnostics {
            iterations: 1,
            converged: true,
            final_gradient_norm: score,
            objective,
        },
    })
}

/// `(1/2n) Σ (Ẑ_i − α x_iᵀθ)²` and the norm of its gradient in `θ`.
pub(crate) fn ls_objective_and_score(data: &Dataset, z: &[f64], theta: &[f64], alpha: f64) -> (f64, f64) {
    let n = data.n() as f64;
    let r: Vec<f64> = z.iter().zip(data.fitted(theta)).map(|(z, f)| z - alpha * f).collect();
    let obj = r.iter().map(|v| v * v).sum::<f64>() / (2.0 * n);
    let g: Vec<f64> = data.x().tr_mul_vec(&r).into_iter().map(|v| -alpha * v / n).collect();
    (obj, norm2(&g))
}

/// Sample expected shortfall at level `alpha`:
/// `(αn)⁻¹ Σ y_i 1(y_i ≤ Q̂) + Q̂ (1 − F̂(Q̂)/α)` with `Q̂ = inf{y : F̂(y) ≥ α}`.
pub fn univariate_es(y: &[f64], alpha: f64) -> f64 {
    assert!(!y.is_empty(), "univariate_es needs at least one observation");
    assert!(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
    let mut sorted = y.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let nf = n as f64;

    // Smallest k with k/n ≥ α, guarding against α·n landing just above an integer.
    let mut k = (alpha * nf).ceil().max(1.0) as usize;
    if k > 1 && (k - 1) as f64 / nf >= alpha {
        k -= 1;
    }
    let q = sorted[k.min(n) - 1];
    let below = sorted.partition_point(|&v| v <= q);
    let f_hat = below as f64 / nf;
    let tail_sum: f64 = sorted[..below].iter().sum();
    tail_sum / (alpha * nf) + q * (1.0 - f_hat / alpha)
}

/// Least squares of `y` on `x` over the subsample `{y_i ≤ x_iᵀβ*}`.
pub fn oracle_es_fit(data: &Dataset, beta_star: &[f64], alpha: f64) -> Result<EsFit> {
    check_inputs(data, beta_star, alpha)?;
    let idx: Vec<usize> = data
        .fitted(beta_star)
        .iter()
        .zip(data.y())
        .enumerate()
        .filter(|(_, (q, y))| *y <= *q)
        .map(|(i, _)| i)
        .collect();
    if idx.len() < data.p() {
        return Err(Error::DegenerateDesign(format!(
            "oracle subsample has {} rows for {} coefficients",
            idx.len(),
            data.p()
        )));
    }
    let xs = data.x().select_rows(&idx);
    let ys: Vec<f64> = idx.iter().map(|&i| data.y()[i]).collect();
    let chol = Cholesky::new(&xs.weighted_gram(None)).map_err(|e| e.into_degenerate("oracle subsample"))?;
    let theta = chol.solve(&xs.tr_mul_vec(&ys));

    let fitted = xs.mul_vec(&theta);
    let resid: Vec<f64> = ys.iter().zip(&fitted).map(|(y, f)| y - f).collect();
    let m = idx.len() as f64;
    let grad: Vec<f64> = xs.tr_mul_vec(&resid).into_iter().map(|v| -v / m).collect();
    Ok(EsFit {
        crossings: count_crossings(data, beta_star, &theta),
        theta,
        alpha,
        method: EsMethod::Oracle,
        tau: None,
        diagnostics: FitDiagnostics {
            iterations: 1,
            converged: true,
            final_gradient_norm: norm2(&grad),
            objective: resid.iter().map(|r| r * r).sum::<f64>() / (2.0 * m),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use proptest::prelude::*;

    fn intercept_only(y: Vec<f64>) -> Dataset {
        let n = y.len();
        Dataset::new(Matrix::from_columns(&[vec![1.0; n]]), y).unwrap()
    }

    /// Naive normal-equation solve by Gaussian elimination with partial pivoting.
    fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let p = b.len();
        for c in 0..p {
            let piv = (c..p).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, piv);
            b.swap(c, piv);
            for r in c + 1..p {
                let f = a[r][c] / a[c][c];
                for k in c..p {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
        let mut x = vec![0.0; p];
        for r in (0..p).rev() {
            let s: f64 = (r + 1..p).map(|k| a[r][k] * x[k]).sum();
            x[r] = (b[r] - s) / a[r][r];
        }
        x
    }

    fn naive_ls(rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
        let p = rows[0].len();
        let mut a = vec![vec![0.0; p]; p];
        let mut b = vec![0.0; p];
        for (row, &yi) in rows.iter().zip(y) {
            for j in 0..p {
                b[j] += row[j] * yi;
                for k in 0..p {
                    a[j][k] += row[j] * row[k];
                }
            }
        }
        gauss_solve(a, b)
    }

    #[test]
    fn generated_response_examples() {
        let data = intercept_only(vec![0.0, 2.0]);
        assert_eq!(generate_response(&data, &[1.0], 0.5), vec![-0.5, 0.5]);

        let data = intercept_only(vec![3.0, 4.0]);
        assert_eq!(generate_response(&data, &[1.0], 0.2), vec![0.2, 0.2]);

        let data = intercept_only(vec![-1.0, 0.0, 2.0]);
        assert_eq!(generate_response(&data, &[0.0], 0.3), vec![-1.0, 0.0, 0.0]);
    }

    #[test]
    fn all_above_quantile_returns_beta() {
        let x = Matrix::from_columns(&[vec![1.0; 4], vec![0.0, 1.0, 2.0, 3.0]]);
        let data = Dataset::new(x, vec![5.0, 6.0, 8.0, 9.0]).unwrap();
        let fit = es_ls_fit(&data, &[0.5, 0.25], 0.1).unwrap();
        assert!((fit.theta[0] - 0.5).abs() < 1e-12 && (fit.theta[1] - 0.25).abs() < 1e-12);
        assert_eq!(fit.crossings, 0);
    }

    #[test]
    fn univariate_examples() {
        let y: Vec<f64> = (1..=10).map(f64::from).collect();
        assert!((univariate_es(&y, 0.2) - 1.5).abs() < 1e-12);
        assert!((univariate_es(&[2.5; 7], 0.3) - 2.5).abs() < 1e-12);
        // α·n = 0.3·10 rounds above 3; Q̂ must still be y_(3).
        let q = univariate_es(&y, 0.3);
        assert!((q - 2.0).abs() < 1e-12, "{q}");
    }

    #[test]
    fn univariate_correction_term() {
        // n = 7, α = 0.2: Q̂ = y_(2) = 2, F̂ = 2/7.
        let y = [7.0, 1.0, 5.0, 2.0, 6.0, 3.0, 4.0];
        let expect = (1.0 + 2.0) / (0.2 * 7.0) + 2.0 * (1.0 - (2.0 / 7.0) / 0.2);
        assert!((univariate_es(&y, 0.2) - expect).abs() < 1e-12);
    }

    #[test]
    fn intercept_only_matches_univariate() {
        let y = vec![3.1, -0.4, 2.2, 5.0, -1.7, 0.9, 4.4, 1.3, -2.2, 0.0, 6.1];
        for &alpha in &[0.1, 0.25, 0.5] {
            let mut s = y.clone();
            s.sort_by(f64::total_cmp);
            let k = (alpha * s.len() as f64).ceil() as usize;
            let q = s[k - 1];
            let fit = es_ls_fit(&intercept_only(y.clone()), &[q], alpha).unwrap();
            assert!((fit.theta[0] - univariate_es(&y, alpha)).abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_examples() {
        let data = intercept_only(vec![1.0, 2.0, 6.0]);
        let fit = oracle_es_fit(&data, &[100.0], 0.5).unwrap();
        assert!((fit.theta[0] - 3.0).abs() < 1e-12);
        let fit = oracle_es_fit(&data, &[2.0], 0.5).unwrap();
        assert!((fit.theta[0] - 1.5).abs() < 1e-12);
        assert!(matches!(oracle_es_fit(&data, &[0.0], 0.5), Err(Error::DegenerateDesign(_))));
    }

    #[test]
    fn method_names_round_trip() {
        for m in [EsMethod::Ls, EsMethod::Huber, EsMethod::NcLs, EsMethod::NcHuber, EsMethod::Oracle] {
            assert_eq!(m.as_str().parse::<EsMethod>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.as_str()));
        }
    }

    fn instance() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>, Vec<f64>, f64)> {
        (2usize..5, 0.05f64..0.95).prop_flat_map(|(p, alpha)| {
            let n = 3 * p + 5;
            (
                prop::collection::vec(prop::collection::vec(-2.0f64..2.0, p - 1), n),
                prop::collection::vec(-5.0f64..5.0, n),
                prop::collection::vec(-1.0f64..1.0, p),
                Just(alpha),
            )
        })
    }

    proptest! {
        #[test]
        fn closed_form_matches_naive_regression((cov, y, beta, alpha) in instance()) {
            let data = Dataset::with_intercept(&cov, y.clone()).unwrap();
            let fit = es_ls_fit(&data, &beta, alpha).unwrap();
            let rows: Vec<Vec<f64>> = cov.iter().map(|r| {
                let mut v = vec![1.0];
                v.extend(r);
                v
            }).collect();
            let z: Vec<f64> = rows.iter().zip(&y).map(|(r, &yi)| {
                let q: f64 = r.iter().zip(&beta).map(|(a, b)| a * b).sum();
                (if yi <= q { yi - q } else { 0.0 }) / alpha + q
            }).collect();
            let oracle = naive_ls(&rows, &z);
            for (a, b) in fit.theta.iter().zip(&oracle) {
                prop_assert!((a - b).abs() <= 1e-8 * (1.0 + b.abs()), "{a} vs {b}");
            }
            // Stationarity of the least-squares objective.
            prop_assert!(fit.diagnostics.final_gradient_norm <= 1e-8);
        }

        #[test]
        fn translation_equivariance((cov, y, beta, alpha) in instance(), shift in prop::collection::vec(-3.0f64..3.0, 5)) {
            let data = Dataset::with_intercept(&cov, y).unwrap();
            let c = &shift[..data.p()];
            let xc = data.fitted(c);
            let moved = data.with_response(data.y().iter().zip(&xc).map(|(a, b)| a + b).collect()).unwrap();
            let beta2: Vec<f64> = beta.iter().zip(c).map(|(a, b)| a + b).collect();
            let base = es_ls_fit(&data, &beta, alpha).unwrap();
            let shifted = es_ls_fit(&moved, &beta2, alpha).unwrap();
            for j in 0..data.p() {
                prop_assert!((shifted.theta[j] - base.theta[j] - c[j]).abs() < 1e-8);
            }
        }
    }
}
