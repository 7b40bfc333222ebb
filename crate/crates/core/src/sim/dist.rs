//! Noise distributions with their quantiles and expected shortfalls.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, StudentsT};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::normal;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseDist {
    Normal,
    StudentT { df: f64 },
}

impl NoiseDist {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseDist::Normal => Ok(()),
            NoiseDist::StudentT { df } if df > 2.0 && df.is_finite() => Ok(()),
            NoiseDist::StudentT { df } => Err(Error::BadDegrees(df)),
        }
    }

    fn student(df: f64) -> StudentsT {
        StudentsT::new(0.0, 1.0, df).expect("degrees of freedom validated")
    }

    pub fn quantile(&self, u: f64) -> f64 {
        match *self {
            NoiseDist::Normal => normal::quantile(u),
            NoiseDist::StudentT { df } => Self::student(df).inverse_cdf(u),
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            NoiseDist::Normal => normal::pdf(x),
            NoiseDist::StudentT { df } => Self::student(df).pdf(x),
        }
    }

    /// Density at the mode.
    pub fn max_pdf(&self) -> f64 {
        match *self {
            NoiseDist::Normal => normal::pdf(0.0),
            NoiseDist::StudentT { df } => {
                (ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0)).exp() / (df * std::f64::consts::PI).sqrt()
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            NoiseDist::Normal => StandardNormal.sample(rng),
            NoiseDist::StudentT { df } => StudentT::new(df).expect("validated").sample(rng),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            NoiseDist::Normal => "normal".into(),
            NoiseDist::StudentT { df } => format!("t{df}"),
        }
    }
}

impl std::str::FromStr for NoiseDist {
    type Err = Error;

    /// Accepts `normal`, `t2.5`, `t:2.5` or `student-t:2.5`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "normal" || s == "gaussian" {
            return Ok(NoiseDist::Normal);
        }
        let rest = s
            .strip_prefix("student-t:")
            .or_else(|| s.strip_prefix("t:"))
            .or_else(|| s.strip_prefix('t'))
            .ok_or_else(|| Error::invalid(format!("unknown noise distribution `{s}`")))?;
        let df: f64 = rest.parse().map_err(|_| Error::invalid(format!("bad degrees of freedom in `{s}`")))?;
        let d = NoiseDist::StudentT { df };
        d.validate()?;
        Ok(d)
    }
}

/// `α`-quantile and expected shortfall `(1/α)∫₀^α Q_u du`, from closed forms:
/// `−φ(q)/α` for the normal and `−(f_ν(q)/α)(ν + q²)/(ν − 1)` for Student-t.
pub fn dist_quantile_es(dist: NoiseDist, alpha: f64) -> Result<(f64, f64)> {
    dist.validate()?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let q = dist.quantile(alpha);
    let es = match dist {
        NoiseDist::Normal => -normal::pdf(q) / alpha,
        NoiseDist::StudentT { df } => -(dist.pdf(q) / alpha) * (df + q * q) / (df - 1.0),
    };
    Ok((q, es))
}

/// `(1/α)∫₀^α Q_u du` by adaptive Simpson quadrature.
///
/// The substitution `u = α s⁵` tames the tail singularity of `Q_u` at zero.
pub fn quadrature_es(dist: NoiseDist, alpha: f64) -> Result<f64> {
    dist.validate()?;
    let f = |s: f64| {
        if s <= 0.0 {
            return 0.0;
        }
        5.0 * s.powi(4) * dist.quantile(alpha * s.powi(5))
    };
    Ok(adaptive_simpson(&f, 0.0, 1.0, 1e-12, 50))
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let (fa, fb) = (f(a), f(b));
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}
