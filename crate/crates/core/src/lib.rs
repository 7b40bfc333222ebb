//! Two-step estimation of expected shortfall regression: a smoothed quantile
//! fit followed by least-squares or adaptive Huber regression on a surrogate
//! response, with optional non-crossing constraints and sandwich inference.

pub mod data;
pub mod error;
pub mod es;
pub mod huber;
pub mod inference;
pub mod linalg;
pub mod noncross;
pub mod normal;
pub mod qr;
pub mod rng;
pub mod sim;

pub use data::{Dataset, FitDiagnostics, SolverControl};
pub use error::{Error, Result};
pub use es::{es_ls_fit, oracle_es_fit, univariate_es, EsFit, EsMethod};
pub use huber::{adaptive_huber_es, calibrate_tau, huber_reg_fit, AdaptiveHuberOptions};
pub use inference::{infer, wald_test, GammaRule, InferenceResult};
pub use linalg::Matrix;
pub use noncross::{nc_es_huber_fit, nc_es_ls_fit};
pub use qr::{smoothed_qr_fit, QuantileFit};
