//! When does a quantile predictor's false-positive rate carry over from the
//! attacker's distribution to the query distribution?
//!
//! Exceedance (`score > threshold`) is the event audited throughout: its
//! rate on nonmembers is the FPR, and a predictor fitted at level `alpha`
//! should keep it near `alpha`. A density ratio that is linear in the
//! predictor's features is enough for that; [`instance`] builds cases with
//! and without that property, and [`diagnostics`] measures how close a
//! trained predictor comes to it.

pub mod audit;
pub mod diagnostics;
pub mod embed;
pub mod gmm;
pub mod instance;
pub mod ratio;

pub use audit::{default_directions, exceedance_rate, fpr_transfer_check, multiaccuracy_audit, pinball_erm_linear, TransferCheck};
pub use diagnostics::{transfer_diagnostics, TransferReport, DEFAULT_GMM_COMPONENTS};
pub use embed::{extract_embeddings, pca2, EmbeddingSet, EmbeddingSource, Pca2};
pub use gmm::{gmm_fit, Gmm, GmmComponent};
pub use instance::{smoothness_scenario, theorem_check, RatioBlend, ScenarioResult};
pub use ratio::{density_ratio, linear_ratio_fit, DensityRatios, RatioFit};
