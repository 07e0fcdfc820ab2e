use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{AuditError, Result};
use crate::scalar::Scalar;

/// One operating point: flag every score `>= threshold` as a member.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
    pub true_positives: usize,
    pub false_positives: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// Starts at `(0, 0)` with an infinite threshold and ends at `(1, 1)`.
    pub points: Vec<RocPoint>,
    pub n_member: usize,
    pub n_nonmember: usize,
}

/// Exact ROC over every distinct score value.
///
/// Equal scores are swept as one block, so a tie between a member and a
/// nonmember moves the curve diagonally in a single step.
pub fn roc_curve<T: Scalar>(member_scores: &[T], nonmember_scores: &[T]) -> Result<RocCurve> {
    if member_scores.is_empty() || nonmember_scores.is_empty() {
        return Err(AuditError::invalid("roc needs at least one member and one nonmember score"));
    }
    let mut all: Vec<(f64, bool)> = member_scores
        .iter()
        .map(|s| (s.as_f64(), true))
        .chain(nonmember_scores.iter().map(|s| (s.as_f64(), false)))
        .collect();
    if all.iter().any(|(s, _)| s.is_nan()) {
        return Err(AuditError::numeric("roc scores contain NaN"));
    }
    all.sort_by(|a, b| b.0.total_cmp(&a.0));

    let (nm, nn) = (member_scores.len(), nonmember_scores.len());
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
        true_positives: 0,
        false_positives: 0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let value = all[i].0;
        while i < all.len() && all[i].0 == value {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: value,
            fpr: fp as f64 / nn as f64,
            tpr: tp as f64 / nm as f64,
            true_positives: tp,
            false_positives: fp,
        });
    }
    Ok(RocCurve {
        points,
        n_member: nm,
        n_nonmember: nn,
    })
}

/// Largest TPR among operating points whose empirical FPR is at most
/// `fpr_target`.
pub fn tpr_at_fpr(curve: &RocCurve, fpr_target: f64) -> f64 {
    // compare counts to avoid rounding in fp / n
    let budget = fpr_target * curve.n_nonmember as f64;
    curve
        .points
        .iter()
        .filter(|p| p.false_positives as f64 <= budget + 1e-9)
        .map(|p| p.tpr)
        .fold(0.0, f64::max)
}

/// `threshold,fpr,tpr` rows, first row `inf,0,0`.
pub fn roc_csv(curve: &RocCurve) -> String {
    let mut out = String::from("threshold,fpr,tpr\n");
    for p in &curve.points {
        let _ = writeln!(out, "{},{},{}", p.threshold, p.fpr, p.tpr);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn separated_scores_reach_top_left() {
        let c = roc_curve(&[5.0, 6.0, 7.0], &[1.0, 2.0]).unwrap();
        assert!(c.points.iter().any(|p| p.fpr == 0.0 && p.tpr == 1.0));
        assert_eq!(tpr_at_fpr(&c, 0.01), 1.0);
        let last = c.points.last().unwrap();
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
    }

    #[test]
    fn identical_multisets_stay_on_diagonal() {
        let s: Vec<f64> = (0..40).map(|i| (i % 7) as f64).collect();
        let c = roc_curve(&s, &s).unwrap();
        for p in &c.points {
            assert!((p.fpr - p.tpr).abs() <= 1.0 / 40.0);
        }
    }

    #[test]
    fn below_one_false_positive_without_separation_gives_zero() {
        let c = roc_curve(&[1.0, 2.0, 2.4], &[2.5, 0.0, 0.5, 1.5]).unwrap();
        assert_eq!(tpr_at_fpr(&c, 0.2), 0.0);
        assert!((tpr_at_fpr(&c, 0.25) - 2.0 / 3.0).abs() < 1e-15);
        // a member above every nonmember counts even at a zero budget
        let c = roc_curve(&[1.0, 2.0, 3.0], &[2.5, 0.0, 0.5, 1.5]).unwrap();
        assert!((tpr_at_fpr(&c, 0.2) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn hand_enumerated_ten_per_side() {
        let members = [0.9, 0.85, 0.8, 0.7, 0.65, 0.6, 0.5, 0.4, 0.3, 0.2];
        let nonmembers = [0.75, 0.55, 0.45, 0.35, 0.3, 0.25, 0.15, 0.1, 0.05, 0.0];
        let c = roc_curve(&members, &nonmembers).unwrap();
        // three members sit above the top nonmember at 0.75
        assert_eq!(tpr_at_fpr(&c, 0.05), 0.3);
        // one false positive admitted: members down to 0.6
        assert_eq!(tpr_at_fpr(&c, 0.1), 0.6);
        // the tie at 0.3 enters as one block with its nonmember, so the
        // member at 0.3 needs a budget of five false positives
        assert_eq!(tpr_at_fpr(&c, 0.4), 0.8);
        assert_eq!(tpr_at_fpr(&c, 0.45), 0.8);
        assert_eq!(tpr_at_fpr(&c, 0.5), 0.9);
    }

    #[test]
    fn csv_layout() {
        let c = roc_curve(&[1.0], &[0.0]).unwrap();
        assert_eq!(roc_csv(&c), "threshold,fpr,tpr\ninf,0,0\n1,0,1\n0,1,1\n");
    }

    #[test]
    fn rejects_empty_and_nan() {
        assert!(roc_curve::<f64>(&[], &[1.0]).is_err());
        assert!(roc_curve(&[f64::NAN], &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn monotone_transform_invariance(m in prop::collection::vec(-5.0f64..5.0, 1..40),
                                         n in prop::collection::vec(-5.0f64..5.0, 1..40)) {
            let a = roc_curve(&m, &n).unwrap();
            let f = |v: &f64| v.exp() * 3.0 + 1.0;
            let b = roc_curve(&m.iter().map(f).collect::<Vec<_>>(), &n.iter().map(f).collect::<Vec<_>>()).unwrap();
            let pa: Vec<(f64, f64)> = a.points.iter().map(|p| (p.fpr, p.tpr)).collect();
            let pb: Vec<(f64, f64)> = b.points.iter().map(|p| (p.fpr, p.tpr)).collect();
            prop_assert_eq!(pa, pb);
        }

        #[test]
        fn curve_is_monotone(m in prop::collection::vec(-5i32..5, 1..40), n in prop::collection::vec(-5i32..5, 1..40)) {
            let m: Vec<f64> = m.into_iter().map(f64::from).collect();
            let n: Vec<f64> = n.into_iter().map(f64::from).collect();
            let c = roc_curve(&m, &n).unwrap();
            for w in c.points.windows(2) {
                prop_assert!(w[0].fpr <= w[1].fpr && w[0].tpr <= w[1].tpr);
            }
            for t in [0.01, 0.05, 0.2, 0.5] {
                let v = tpr_at_fpr(&c, t);
                // never above the TPR of the first point beyond the budget
                if let Some(next) = c.points.iter().find(|p| p.fpr > t) {
                    prop_assert!(v <= next.tpr);
                }
            }
        }
    }
}
