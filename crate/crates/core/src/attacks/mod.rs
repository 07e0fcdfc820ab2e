//! The three membership-inference attacks and a uniform prediction surface.
//!
//! Every attack emits a hard decision and a continuous score oriented so
//! that larger means more member-like: the raw score for the marginal
//! attack, the z-score for offline LiRA and `s - q_alpha(x)` for quantile
//! regression.

pub mod lira;
pub mod marginal;
pub mod normal;
pub mod quantile;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

pub use lira::{lira_calibrate, lira_offline_score, LiraOfflineAttack, SIGMA_FLOOR};
pub use marginal::{marginal_fit, order_statistic_index, order_statistic_threshold, MarginalAttack};
pub use normal::inverse_normal_cdf;
pub use quantile::{fit_on_scores, qr_threshold, qr_train, QuantileArch, QuantileAttack, QuantileMode};

use crate::error::{AuditError, Result};
use crate::netcore::{self, MlpModel};
use crate::scalar::Scalar;
use crate::scores::{ScoreFn, ScoreKind};
use crate::target;

/// A labeled query. `public_row` identifies queries that are rows of the
/// public set the shadow ensemble was trained on.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a, T> {
    pub x: &'a [T],
    pub label: usize,
    pub public_row: Option<usize>,
}

impl<'a, T> Query<'a, T> {
    pub fn external(x: &'a [T], label: usize) -> Self {
        Self {
            x,
            label,
            public_row: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FittedAttack<T> {
    Marginal {
        attack: MarginalAttack<T>,
        score_fn: ScoreFn,
    },
    Lira(LiraOfflineAttack<T>),
    Quantile(QuantileAttack<T>),
}

impl<T: Scalar> FittedAttack<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            FittedAttack::Marginal { .. } => "marginal",
            FittedAttack::Lira(_) => "lira",
            FittedAttack::Quantile(_) => "quantile",
        }
    }

    pub fn score_fn(&self) -> ScoreFn {
        match self {
            FittedAttack::Marginal { score_fn, .. } => *score_fn,
            FittedAttack::Lira(a) => a.score_fn,
            FittedAttack::Quantile(a) => a.score_fn,
        }
    }

    /// `(member, continuous_score)` for one query against the target.
    pub fn predict(&self, target: &MlpModel<T>, query: Query<'_, T>) -> Result<(bool, T)> {
        let logits = target.forward(query.x)?;
        let s = self.score_fn().score(&logits, query.label)?;
        match self {
            FittedAttack::Marginal { attack, .. } => Ok(attack.predict(s)),
            FittedAttack::Lira(a) => {
                let z = a.z_score(s, &a.shadow_scores(query.x, query.label, query.public_row)?);
                let t = a
                    .threshold
                    .ok_or_else(|| AuditError::invalid("lira attack has not been calibrated"))?;
                Ok((z > t, z))
            }
            FittedAttack::Quantile(a) => a.predict(query.x, s),
        }
    }
}

pub fn attack_predict<T: Scalar>(
    attack: &FittedAttack<T>,
    target: &MlpModel<T>,
    query: Query<'_, T>,
) -> Result<(bool, T)> {
    attack.predict(target, query)
}

fn meta_line(out: &mut String, key: &str, value: impl std::fmt::Display) {
    let _ = writeln!(out, "{key}={value}");
}

/// Writes `attack.meta` (key=value) plus checkpoints: `predictor.ckpt` for
/// quantile attacks and a `shadows/` ensemble directory for LiRA.
pub fn write_attack<T: Scalar>(attack: &FittedAttack<T>, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| AuditError::io(dir, e))?;
    let mut meta = String::new();
    meta_line(&mut meta, "kind", attack.kind());
    let sf = attack.score_fn();
    meta_line(&mut meta, "score_fn", sf.kind.name());
    meta_line(&mut meta, "clip_epsilon", sf.clip_epsilon);
    match attack {
        FittedAttack::Marginal { attack, .. } => {
            meta_line(&mut meta, "alpha", attack.alpha);
            meta_line(&mut meta, "threshold", attack.threshold.as_f64());
        }
        FittedAttack::Lira(a) => {
            meta_line(&mut meta, "sigma", a.global_sigma.as_f64());
            if let Some(t) = a.threshold {
                meta_line(&mut meta, "threshold", t.as_f64());
            }
            target::write_ensemble(&a.ensemble, &dir.join("shadows"))?;
        }
        FittedAttack::Quantile(a) => {
            meta_line(&mut meta, "alpha", a.alpha);
            meta_line(&mut meta, "mode", a.mode.name());
            meta_line(&mut meta, "offset", a.offset.as_f64());
            meta_line(&mut meta, "scale", a.scale.as_f64());
            netcore::write_model(&a.predictor, &dir.join("predictor.ckpt"))?;
        }
    }
    let path = dir.join("attack.meta");
    std::fs::write(&path, meta).map_err(|e| AuditError::io(&path, e))
}

pub fn read_attack<T: Scalar>(dir: &Path) -> Result<FittedAttack<T>> {
    let path = dir.join("attack.meta");
    let text = std::fs::read_to_string(&path).map_err(|e| AuditError::io(&path, e))?;
    let mut meta = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let (k, v) = line.split_once('=').ok_or(AuditError::Parse {
            line: i + 1,
            msg: format!("expected key=value, got {line:?}"),
        })?;
        meta.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| {
        meta.get(k).cloned().ok_or(AuditError::Parse {
            line: 0,
            msg: format!("attack.meta lacks `{k}`"),
        })
    };
    let num = |k: &str| -> Result<f64> {
        get(k)?.parse().map_err(|_| AuditError::Parse {
            line: 0,
            msg: format!("attack.meta `{k}` is not a number"),
        })
    };
    let kind = ScoreKind::parse(&get("score_fn")?).ok_or(AuditError::Parse {
        line: 0,
        msg: "unknown score_fn".into(),
    })?;
    let score_fn = ScoreFn::with_clip(kind, num("clip_epsilon")?)?;
    match get("kind")?.as_str() {
        "marginal" => Ok(FittedAttack::Marginal {
            attack: MarginalAttack {
                threshold: T::lit(num("threshold")?),
                alpha: num("alpha")?,
            },
            score_fn,
        }),
        "lira" => Ok(FittedAttack::Lira(LiraOfflineAttack {
            ensemble: target::read_ensemble(&dir.join("shadows"))?,
            score_fn,
            global_sigma: T::lit(num("sigma")?),
            threshold: meta.get("threshold").and_then(|v| v.parse().ok()).map(T::lit),
        })),
        "quantile" => Ok(FittedAttack::Quantile(QuantileAttack {
            predictor: netcore::read_model(&dir.join("predictor.ckpt"))?,
            mode: QuantileMode::parse(&get("mode")?).ok_or(AuditError::Parse {
                line: 0,
                msg: "unknown quantile mode".into(),
            })?,
            alpha: num("alpha")?,
            score_fn,
            offset: T::lit(num("offset")?),
            scale: T::lit(num("scale")?),
        })),
        other => Err(AuditError::Parse {
            line: 0,
            msg: format!("unknown attack kind {other:?}"),
        }),
    }
}
