//! Quantile autoregression with an exogenous regressor:
//!
//! ```text
//! Y_t = F⁻¹(U_t) + (a0 + a1 U_t) Y_{t−1} + (b0 + b1 U_t) Z_{t−1},
//! U_t, Z_t ~ Unif(0, 1).
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::rng_from_seed;

use super::dist::{dist_quantile_es, NoiseDist};
use super::hetero::TrueCoefficients;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QarModel {
    pub a0: f64,
    pub a1: f64,
    pub b0: f64,
    pub b1: f64,
    pub dist: NoiseDist,
    pub burn_in: usize,
}

impl QarModel {
    pub fn new(a0: f64, a1: f64, b0: f64, b1: f64, dist: NoiseDist) -> Result<Self> {
        let m = Self { a0, a1, b0, b1, dist, burn_in: 20 };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.dist.validate()?;
        if !(self.a0 > 0.0 && self.a1 > 0.0 && self.b1 > 0.0 && self.a0 + self.a1 <= 1.0) {
            return Err(Error::invalid("need a0, a1, b1 > 0 and a0 + a1 <= 1"));
        }
        Ok(())
    }

    /// `β*(α) = (F⁻¹(α), a0 + a1α, b0 + b1α)` and
    /// `θ*(α) = (ES_F(α), a0 + a1α/2, b0 + b1α/2)`.
    pub fn true_coefficients(&self, alpha: f64) -> Result<TrueCoefficients> {
        let (q, es) = dist_quantile_es(self.dist, alpha)?;
        Ok(TrueCoefficients {
            beta_star: vec![q, self.a0 + self.a1 * alpha, self.b0 + self.b1 * alpha],
            theta_star: vec![es, self.a0 + 0.5 * self.a1 * alpha, self.b0 + 0.5 * self.b1 * alpha],
            q_eps: q,
            es_eps: es,
        })
    }
}

#[derive(Debug, Clone)]
pub struct QarSample {
    /// Rows `(1, Y_{t−1}, Z_{t−1})` with response `Y_t`, burn-in removed.
    pub data: Dataset,
    pub truth: TrueCoefficients,
    /// Kept periods where the right-hand side is not increasing in `U_t`.
    pub monotonicity_violations: usize,
}

/// Simulates `t_len` periods after discarding `burn_in`.
pub fn gen_qar(model: &QarModel, t_len: usize, alpha: f64, seed: u64) -> Result<QarSample> {
    model.validate()?;
    if t_len < 3 {
        return Err(Error::invalid("need at least 3 periods"));
    }
    let truth = model.true_coefficients(alpha)?;
    let mut rng = rng_from_seed(seed);
    // The u-derivative of the right-hand side is 1/f(F⁻¹(u)) + a1 Y + b1 Z,
    // whose minimum over u is 1/max f + a1 Y + b1 Z.
    let slope_floor = 1.0 / model.dist.max_pdf();

    let total = t_len + model.burn_in;
    let mut y_prev = 0.0;
    let mut z_prev: f64 = rng.random();
    let (mut ylag, mut zlag, mut y) = (Vec::with_capacity(t_len), Vec::with_capacity(t_len), Vec::with_capacity(t_len));
    let mut violations = 0;
    for t in 0..total {
        let u: f64 = rng.random_range(f64::EPSILON..1.0);
        let yt = model.dist.quantile(u) + (model.a0 + model.a1 * u) * y_prev + (model.b0 + model.b1 * u) * z_prev;
        if t >= model.burn_in {
            if slope_floor + model.a1 * y_prev + model.b1 * z_prev < 0.0 {
                violations += 1;
            }
            ylag.push(y_prev);
            zlag.push(z_prev);
            y.push(yt);
        }
        y_prev = yt;
        z_prev = rng.random();
    }
    let x = Matrix::from_columns(&[vec![1.0; t_len], ylag, zlag]);
    Ok(QarSample { data: Dataset::new(x, y)?, truth, monotonicity_violations: violations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normal;

    #[test]
    fn true_coefficients_formula() {
        let m = QarModel::new(0.5, 0.5, 0.95, 0.5, NoiseDist::Normal).unwrap();
        let t = m.true_coefficients(0.05).unwrap();
        assert!((t.theta_star[1] - 0.5125).abs() < 1e-12);
        assert!((t.theta_star[2] - 0.9625).abs() < 1e-12);
        assert!((t.theta_star[0] - normal::expected_shortfall(0.05)).abs() < 1e-12);
    }

    #[test]
    fn constant_slopes_when_no_interaction() {
        let m = QarModel { a0: 0.4, a1: 0.0, b0: 1.0, b1: 0.0, dist: NoiseDist::Normal, burn_in: 20 };
        let t = m.true_coefficients(0.1).unwrap();
        assert_eq!(t.theta_star[1], 0.4);
        assert_eq!(t.theta_star[2], 1.0);
        assert!(m.validate().is_err());
    }

    #[test]
    fn deterministic_and_shaped() {
        let m = QarModel::new(0.5, 0.5, 0.95, 0.5, NoiseDist::StudentT { df: 3.5 }).unwrap();
        let a = gen_qar(&m, 500, 0.05, 3).unwrap();
        let b = gen_qar(&m, 500, 0.05, 3).unwrap();
        assert_eq!(a.data.y(), b.data.y());
        assert_eq!(a.data.n(), 500);
        // The lag column is the previous response.
        for t in 1..500 {
            assert_eq!(a.data.x()[(t, 1)], a.data.y()[t - 1]);
        }
    }

    #[test]
    fn halves_look_stationary() {
        let m = QarModel::new(0.5, 0.3, 0.95, 0.5, NoiseDist::Normal).unwrap();
        let s = gen_qar(&m, 20_000, 0.05, 8).unwrap();
        let y = s.data.y();
        let (h1, h2) = y.split_at(y.len() / 2);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let sd = |v: &[f64]| {
            let m = mean(v);
            (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
        };
        // Autocorrelation inflates the standard error; allow for it generously.
        let se = (sd(h1).powi(2) / h1.len() as f64 + sd(h2).powi(2) / h2.len() as f64).sqrt() * 5.0;
        assert!((mean(h1) - mean(h2)).abs() < 3.0 * se);
    }
}
