//! ROC analysis and the class-dropout / sample-scarcity protocols.
//!
//! Queries for class `c` are balanced between private rows (members) and
//! untouched holdout rows (nonmembers). Every attack is fitted on the
//! attacker's public split after class filtering and subsampling; TPR at a
//! target FPR is read off the exact ROC of the attack's continuous score.

pub mod experiment;
pub mod report;
pub mod roc;

pub use experiment::{
    fit_attacks, run_class_dropout, run_sample_scarcity, seed_stage, AttackSpec, DataSource, ExperimentConfig, ExperimentOutput, SeedStage,
    Variant,
};
pub use report::{median, CellDiagnostics, CellReport, DecisionPoint, EvalReport, GroupMetrics};
pub use roc::{roc_csv, roc_curve, tpr_at_fpr, RocCurve, RocPoint};
