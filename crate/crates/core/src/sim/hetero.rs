//! Heteroscedastic linear model `Y = a + Xᵀγ* + (Xᵀη*) ε`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::rng_from_seed;

use super::dist::{dist_quantile_es, NoiseDist};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeteroModel {
    /// Number of covariates, excluding the intercept.
    pub p: usize,
    pub dist: NoiseDist,
    pub alpha: f64,
    pub gamma_star: Vec<f64>,
    pub eta_star: Vec<f64>,
    /// Constant added to every response.
    pub intercept: f64,
    /// Covariates are drawn from `Unif(0, x_high)`.
    pub x_high: f64,
}

/// True coefficients in the fitting parameterization (intercept first).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrueCoefficients {
    pub beta_star: Vec<f64>,
    pub theta_star: Vec<f64>,
    pub q_eps: f64,
    pub es_eps: f64,
}

impl HeteroModel {
    /// Rademacher `γ*`, `η*_j ∈ {0, 0.5}` with equal probability, no
    /// intercept and `Unif(0, 1.5)` covariates.
    pub fn location_scale_design(p: usize, dist: NoiseDist, alpha: f64, seed: u64) -> Result<Self> {
        let mut rng = rng_from_seed(seed);
        let gamma_star = (0..p).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let eta_star = (0..p).map(|_| if rng.random_bool(0.5) { 0.5 } else { 0.0 }).collect();
        let m = Self { p, dist, alpha, gamma_star, eta_star, intercept: 0.0, x_high: 1.5 };
        m.validate()?;
        Ok(m)
    }

    /// Intercept 2, `Unif(0, 2)` covariates, `η* = (0.5, 0.5, 0, …)` and `γ*`
    /// uniform on the sphere of radius `radius`.
    pub fn noncross_design(p: usize, dist: NoiseDist, alpha: f64, radius: f64, seed: u64) -> Result<Self> {
        if p < 2 {
            return Err(Error::invalid("the non-crossing design needs p >= 2"));
        }
        let mut rng = rng_from_seed(seed);
        let g: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let gamma_star = g.iter().map(|v| radius * v / norm).collect();
        let mut eta_star = vec![0.0; p];
        eta_star[0] = 0.5;
        eta_star[1] = 0.5;
        let m = Self { p, dist, alpha, gamma_star, eta_star, intercept: 2.0, x_high: 2.0 };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.dist.validate()?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.p == 0 || self.gamma_star.len() != self.p || self.eta_star.len() != self.p {
            return Err(Error::invalid("gamma_star and eta_star must have length p >= 1"));
        }
        if !(self.x_high > 0.0) {
            return Err(Error::invalid("x_high must be positive"));
        }
        Ok(())
    }

    pub fn true_coefficients(&self) -> Result<TrueCoefficients> {
        let (q, es) = dist_quantile_es(self.dist, self.alpha)?;
        let mut beta_star = vec![self.intercept];
        let mut theta_star = vec![self.intercept];
        for (g, e) in self.gamma_star.iter().zip(&self.eta_star) {
            beta_star.push(g + e * q);
            theta_star.push(g + e * es);
        }
        Ok(TrueCoefficients { beta_star, theta_star, q_eps: q, es_eps: es })
    }

    /// Draws `n` observations; the design gets an intercept column.
    pub fn generate(&self, n: usize, seed: u64) -> Result<(Dataset, TrueCoefficients)> {
        let truth = self.true_coefficients()?;
        let mut rng = rng_from_seed(seed);
        let mut cols = vec![vec![1.0; n]];
        cols.extend((0..self.p).map(|_| Vec::with_capacity(n)));
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let mut loc = self.intercept;
            let mut scale = 0.0;
            for j in 0..self.p {
                let xj = rng.random_range(0.0..self.x_high);
                cols[j + 1].push(xj);
                loc += xj * self.gamma_star[j];
                scale += xj * self.eta_star[j];
            }
            y.push(loc + scale * self.dist.sample(&mut rng));
        }
        Ok((Dataset::new(Matrix::from_columns(&cols), y)?, truth))
    }
}

/// `gen_hetero` of the public API: data and truth for one replication.
pub fn gen_hetero(model: &HeteroModel, n: usize, seed: u64) -> Result<(Dataset, TrueCoefficients)> {
    model.generate(n, seed)
}

/// `⌈50p/α⌉`, robust to `50p/α` landing a hair above an integer.
pub fn default_sample_size(p: usize, alpha: f64) -> usize {
    (50.0 * p as f64 / alpha - 1e-9).ceil() as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SolverControl;
    use crate::es::es_ls_fit;
    use crate::qr::smoothed_qr_fit;

    #[test]
    fn sample_sizes() {
        assert_eq!(default_sample_size(20, 0.05), 20_000);
        assert_eq!(default_sample_size(20, 0.1), 10_000);
        assert_eq!(default_sample_size(20, 0.2), 5_000);
        assert_eq!(default_sample_size(3, 0.7), 215);
    }

    #[test]
    fn design_draws() {
        let m = HeteroModel::location_scale_design(200, NoiseDist::Normal, 0.1, 1).unwrap();
        assert!(m.gamma_star.iter().all(|&g| g == 1.0 || g == -1.0));
        assert!(m.eta_star.iter().all(|&e| e == 0.0 || e == 0.5));
        let t = m.true_coefficients().unwrap();
        assert!(t.theta_star.iter().map(|v| v * v).sum::<f64>() > 0.0);
        assert!(t.es_eps < t.q_eps);
        let nc = HeteroModel::noncross_design(10, NoiseDist::StudentT { df: 2.5 }, 0.1, 5f64.sqrt(), 3).unwrap();
        let r: f64 = nc.gamma_star.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((r - 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn deterministic() {
        let m = HeteroModel::location_scale_design(3, NoiseDist::StudentT { df: 2.5 }, 0.2, 7).unwrap();
        let (a, _) = m.generate(50, 99).unwrap();
        let (b, _) = m.generate(50, 99).unwrap();
        assert_eq!(a.y(), b.y());
        assert_eq!(a.x().as_slice(), b.x().as_slice());
    }

    #[test]
    fn noiseless_recovers_gamma() {
        let mut m = HeteroModel::location_scale_design(4, NoiseDist::Normal, 0.2, 2).unwrap();
        m.eta_star = vec![0.0; 4];
        let (data, truth) = m.generate(200, 5).unwrap();
        assert_eq!(truth.beta_star, truth.theta_star);
        let ctl = SolverControl::default().with_tol(1e-10);
        let qf = smoothed_qr_fit(&data, 0.2, Some(1e-3), &ctl, None).unwrap();
        let es = es_ls_fit(&data, &truth.beta_star, 0.2).unwrap();
        for j in 0..5 {
            assert!((es.theta[j] - truth.theta_star[j]).abs() < 1e-8);
            assert!((qf.beta[j] - truth.beta_star[j]).abs() < 1e-2);
        }
    }

    #[test]
    fn standardized_residual_quantile() {
        let m = HeteroModel::location_scale_design(2, NoiseDist::Normal, 0.1, 11).unwrap();
        let mut m = m;
        m.eta_star = vec![0.5, 0.5];
        let (data, truth) = m.generate(1_000_000, 4).unwrap();
        let mut eps: Vec<f64> = (0..data.n())
            .map(|i| {
                let x = [data.x()[(i, 1)], data.x()[(i, 2)]];
                let loc = x[0] * m.gamma_star[0] + x[1] * m.gamma_star[1];
                (data.y()[i] - loc) / (0.5 * x[0] + 0.5 * x[1])
            })
            .collect();
        eps.sort_by(f64::total_cmp);
        let q = eps[(0.1 * eps.len() as f64) as usize];
        assert!((q - truth.q_eps).abs() < 0.01, "{q}");
    }
}
