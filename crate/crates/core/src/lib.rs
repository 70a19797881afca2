//! Quasi-likelihood analysis for volatility parameters of discretely sampled
//! diffusion-type processes on a fixed time interval.
//!
//! The crate covers model definition and simulation ([`model`],
//! [`simulate`]), the quasi-log-likelihood and its random fields ([`qlik`]),
//! quasi-MLE and Bayes-type estimation ([`estimate`]), nondegeneracy
//! diagnostics ([`nondeg`]) and Monte Carlo studies ([`mcstudy`]).

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod cli;
pub mod error;
pub mod estimate;
pub mod exec;
pub mod mcstudy;
pub mod model;
pub mod nondeg;
pub mod numerics;
pub mod optim;
pub mod qlik;
pub mod simulate;
pub mod stats;

pub use error::{QlaError, Result};
pub use estimate::{bayes, qmle, qmle_with_bayes_init, standardize, EstimationResult, EstimatorKind, Prior};
pub use exec::Execution;
pub use mcstudy::{run_study, summarize, McReport, StudyConfig};
pub use model::{builtin, ModelSpec, ThetaBox};
pub use qlik::{h_n, Observations, QuasiLikelihood};
pub use simulate::{simulate_path, SamplePath, Scheme, SimConfig};
