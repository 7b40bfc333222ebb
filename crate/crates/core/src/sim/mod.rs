//! Data generators and the Monte Carlo harness.

pub mod dist;
pub mod harness;
pub mod hetero;
pub mod qar;
pub mod report;

pub use dist::{dist_quantile_es, quadrature_es, NoiseDist};
pub use harness::{fit_method, relative_error, run_replications, Design, FirstStage, SimConfig, SimulationReport};
pub use hetero::{gen_hetero, default_sample_size, HeteroModel, TrueCoefficients};
pub use qar::{gen_qar, QarModel, QarSample};
pub use report::{lookup, mean_se, summarize, MethodRecord, ReplicationRecord, SummaryRow, METRICS};
