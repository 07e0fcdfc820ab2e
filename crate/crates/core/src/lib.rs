//! Membership-inference auditing when the auditor's public data is missing
//! whole classes.
//!
//! The crate trains a target classifier and an offline shadow ensemble on
//! synthetic class-blob data, fits marginal, shadow-model and
//! quantile-regression attacks, evaluates them with exact ROC sweeps, and
//! checks when a quantile predictor's false-positive guarantee transfers
//! from seen to unseen classes.
//!
//! All numeric kernels are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the `f64` instantiation used by the pipelines and the
//! command-line tool.

pub mod attacks;
pub mod config;
pub mod dataspace;
pub mod error;
pub mod evaluation;
pub mod linalg;
pub mod netcore;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod scores;
pub mod target;
pub mod transfer;

pub use error::{AuditError, Result};
pub use scalar::Scalar;

pub type Dataset = dataspace::LabeledDataset<f64>;
pub type Mlp = netcore::MlpModel<f64>;
pub type Ensemble = target::ShadowEnsemble<f64>;
pub type Attack = attacks::FittedAttack<f64>;
