//! Scalar score functions `s(x, y, f)` computed from a model's logits.

use std::fmt::Write as _;

use crate::error::{AuditError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    /// `f(x)_y - max_{y' != y} f(x)_{y'}`.
    TrueLabelMargin,
    /// Largest logit minus the runner-up; ignores the label.
    TopTwoMargin,
    /// Log-odds of the clipped softmax probability of the true label.
    TrueLabelConfidence,
}

impl ScoreKind {
    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::TrueLabelMargin => "true_label_margin",
            ScoreKind::TopTwoMargin => "top_two_margin",
            ScoreKind::TrueLabelConfidence => "true_label_confidence",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "true_label_margin" => Some(ScoreKind::TrueLabelMargin),
            "top_two_margin" => Some(ScoreKind::TopTwoMargin),
            "true_label_confidence" => Some(ScoreKind::TrueLabelConfidence),
            _ => None,
        }
    }

    pub fn uses_label(self) -> bool {
        !matches!(self, ScoreKind::TopTwoMargin)
    }
}

pub const DEFAULT_CLIP_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreFn {
    pub kind: ScoreKind,
    pub clip_epsilon: f64,
}

impl ScoreFn {
    pub fn new(kind: ScoreKind) -> Self {
        Self {
            kind,
            clip_epsilon: DEFAULT_CLIP_EPSILON,
        }
    }

    pub fn with_clip(kind: ScoreKind, clip_epsilon: f64) -> Result<Self> {
        if !(clip_epsilon > 0.0 && clip_epsilon < 0.5) {
            return Err(AuditError::invalid(format!(
                "clip epsilon must lie in (0, 0.5), got {clip_epsilon}"
            )));
        }
        Ok(Self { kind, clip_epsilon })
    }

    pub fn score<T: Scalar>(&self, logits: &[T], label: usize) -> Result<T> {
        match self.kind {
            ScoreKind::TrueLabelMargin => true_label_margin(logits, label),
            ScoreKind::TopTwoMargin => top_two_margin(logits),
            ScoreKind::TrueLabelConfidence => true_label_confidence(logits, label, self.clip_epsilon),
        }
    }
}

fn check_label<T>(logits: &[T], y: usize) -> Result<()> {
    if logits.len() < 2 {
        return Err(AuditError::invalid("scores need at least two logits"));
    }
    if y >= logits.len() {
        return Err(AuditError::invalid(format!(
            "label {y} out of range for {} logits",
            logits.len()
        )));
    }
    Ok(())
}

pub fn true_label_margin<T: Scalar>(logits: &[T], y: usize) -> Result<T> {
    check_label(logits, y)?;
    let other = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != y)
        .fold(T::neg_infinity(), |m, (_, &v)| m.max(v));
    Ok(logits[y] - other)
}

pub fn top_two_margin<T: Scalar>(logits: &[T]) -> Result<T> {
    if logits.len() < 2 {
        return Err(AuditError::invalid("scores need at least two logits"));
    }
    let (mut first, mut second) = (T::neg_infinity(), T::neg_infinity());
    for &v in logits {
        if v > first {
            second = first;
            first = v;
        } else if v > second {
            second = v;
        }
    }
    Ok(first - second)
}

/// `log(p / (1 - p))` with `p = softmax(logits)[y]` clipped to `[eps, 1 - eps]`.
pub fn true_label_confidence<T: Scalar>(logits: &[T], y: usize, clip_epsilon: f64) -> Result<T> {
    check_label(logits, y)?;
    let p = crate::netcore::softmax(logits)[y];
    let eps = T::lit(clip_epsilon);
    let p = p.max(eps).min(T::one() - eps);
    Ok((p / (T::one() - p)).ln())
}

/// One row of a score dump.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord<T> {
    pub row_index: usize,
    pub label: usize,
    pub score: T,
    pub is_member: bool,
}

/// CSV with header `row_index,label,score,is_member`.
pub fn score_dump_csv<T: Scalar>(records: &[ScoreRecord<T>]) -> String {
    let mut out = String::from("row_index,label,score,is_member\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.row_index,
            r.label,
            r.score.as_f64(),
            u8::from(r.is_member)
        );
    }
    out
}
