use crate::error::{AuditError, Result};
use crate::scalar::Scalar;

/// One-based index `ceil((1 - alpha)(n + 1))`, clamped to `[1, n]`.
pub fn order_statistic_index(n: usize, alpha: f64) -> usize {
    let raw = ((1.0 - alpha) * (n as f64 + 1.0) - 1e-9).ceil();
    (raw.max(1.0) as usize).min(n)
}

/// The order statistic at [`order_statistic_index`]. Deciding "member" for
/// scores strictly above it flags at most `alpha * n` of the fitting scores.
pub fn order_statistic_threshold<T: Scalar>(scores: &[T], alpha: f64) -> Result<T> {
    if scores.is_empty() {
        return Err(AuditError::invalid("cannot calibrate a threshold on no scores"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(AuditError::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(AuditError::numeric("NaN score in calibration set"));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN filtered"));
    Ok(sorted[order_statistic_index(sorted.len(), alpha) - 1])
}

/// Single global threshold calibrated on nonmember scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginalAttack<T> {
    pub threshold: T,
    pub alpha: f64,
}

pub fn marginal_fit<T: Scalar>(public_scores: &[T], alpha: f64) -> Result<MarginalAttack<T>> {
    Ok(MarginalAttack {
        threshold: order_statistic_threshold(public_scores, alpha)?,
        alpha,
    })
}

impl<T: Scalar> MarginalAttack<T> {
    /// `(s > threshold, s)`.
    pub fn predict(&self, score: T) -> (bool, T) {
        (score > self.threshold, score)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hundred_scores_at_five_percent() {
        let scores: Vec<f64> = (1..=100).map(f64::from).collect();
        let a = marginal_fit(&scores, 0.05).unwrap();
        assert_eq!(a.threshold, 96.0);
        let fp = scores.iter().filter(|&&s| a.predict(s).0).count();
        assert_eq!(fp, 4);
    }

    #[test]
    fn alpha_near_one_gives_minimum() {
        let scores = [3.0, -1.0, 2.0];
        assert_eq!(marginal_fit(&scores, 0.999_999).unwrap().threshold, -1.0);
    }

    #[test]
    fn equal_scores_never_flagged() {
        let scores = [0.7f32; 50];
        let a = marginal_fit(&scores, 0.2).unwrap();
        assert!(scores.iter().all(|&s| !a.predict(s).0));
        assert!(a.predict(0.7 + 1e-6).0);
    }

    #[test]
    fn empty_and_bad_alpha_rejected() {
        assert!(marginal_fit::<f64>(&[], 0.1).is_err());
        assert!(marginal_fit(&[1.0], 0.0).is_err());
    }

    #[test]
    fn fitted_fpr_never_exceeds_alpha() {
        for n in 1..200usize {
            let scores: Vec<f64> = (0..n).map(|i| ((i * 37) % n) as f64).collect();
            for alpha in [0.01, 0.05, 0.1, 0.5, 0.9] {
                let t = order_statistic_threshold(&scores, alpha).unwrap();
                let fp = scores.iter().filter(|&&s| s > t).count();
                assert!(fp as f64 <= alpha * n as f64 + 1e-9, "n={n} alpha={alpha}");
            }
        }
    }
}
