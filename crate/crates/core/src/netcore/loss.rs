use crate::error::{AuditError, Result};
use crate::scalar::Scalar;

/// Log-variance outputs of the Gaussian head are clamped to this magnitude.
pub const LOG_VAR_BOUND: f64 = 10.0;

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossSpec {
    /// Classifier objective over integer labels.
    SoftmaxCrossEntropy,
    /// Check loss that elicits the `(1 - alpha)`-quantile of the target.
    Pinball { alpha: f64 },
    /// Negative log-likelihood of a Gaussian head `(mean, log_var)`.
    GaussianNll,
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        if let LossSpec::Pinball { alpha } = *self {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(AuditError::invalid(format!(
                    "pinball alpha must lie in (0, 1), got {alpha}"
                )));
            }
        }
        Ok(())
    }

    /// Network output width this loss consumes.
    pub fn output_dim(&self, class_count: usize) -> usize {
        match self {
            LossSpec::SoftmaxCrossEntropy => class_count,
            LossSpec::Pinball { .. } => 1,
            LossSpec::GaussianNll => 2,
        }
    }

    /// Loss and its gradient with respect to the network output for one row.
    pub(crate) fn eval<T: Scalar>(
        &self,
        output: &[T],
        target: TargetValue<T>,
        grad: &mut Vec<T>,
    ) -> Result<T> {
        grad.clear();
        match (*self, target) {
            (LossSpec::SoftmaxCrossEntropy, TargetValue::Label(y)) => {
                let loss = softmax_cross_entropy(output, y)?;
                grad.extend(softmax(output));
                grad[y] = grad[y] - T::one();
                Ok(loss)
            }
            (LossSpec::Pinball { alpha }, TargetValue::Score(s)) => {
                let pred = output[0];
                let loss = pinball_loss(pred, s, alpha)?;
                grad.push(pinball_grad(pred, s, alpha));
                Ok(loss)
            }
            (LossSpec::GaussianNll, TargetValue::Score(s)) => {
                let loss = gaussian_nll(output[0], output[1], s)?;
                let (gm, gv) = gaussian_nll_grad(output[0], output[1], s);
                grad.push(gm);
                grad.push(gv);
                Ok(loss)
            }
            _ => Err(AuditError::invalid(
                "loss kind does not match target kind (labels vs scores)",
            )),
        }
    }
}

/// Supervision for a training batch.
#[derive(Debug, Clone, Copy)]
pub enum Targets<'a, T> {
    Labels(&'a [usize]),
    Scores(&'a [T]),
}

impl<'a, T: Scalar> Targets<'a, T> {
    pub fn len(&self) -> usize {
        match self {
            Targets::Labels(v) => v.len(),
            Targets::Scores(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn get(&self, i: usize) -> TargetValue<T> {
        match self {
            Targets::Labels(v) => TargetValue::Label(v[i]),
            Targets::Scores(v) => TargetValue::Score(v[i]),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum TargetValue<T> {
    Label(usize),
    Score(T),
}

/// `max{alpha (pred - s), (1 - alpha)(s - pred)}`.
pub fn pinball_loss<T: Scalar>(pred: T, s: T, alpha: f64) -> Result<T> {
    if !(pred.is_finite() && s.is_finite()) {
        return Err(AuditError::numeric("pinball loss on non-finite input"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(AuditError::invalid(format!("pinball alpha {alpha} outside (0, 1)")));
    }
    let a = T::lit(alpha);
    Ok((a * (pred - s)).max((T::one() - a) * (s - pred)))
}

/// Derivative of [`pinball_loss`] in `pred`: `1{s < pred} - (1 - alpha)`.
/// At `s == pred` the indicator is zero.
pub fn pinball_grad<T: Scalar>(pred: T, s: T, alpha: f64) -> T {
    let below = if s < pred { T::one() } else { T::zero() };
    below - (T::one() - T::lit(alpha))
}

/// `0.5 (log_var + (s - mean)^2 exp(-log_var)) + 0.5 log(2 pi)` with the
/// log-variance clamped to `[-LOG_VAR_BOUND, LOG_VAR_BOUND]`.
pub fn gaussian_nll<T: Scalar>(mean: T, log_var: T, s: T) -> Result<T> {
    if !(mean.is_finite() && log_var.is_finite() && s.is_finite()) {
        return Err(AuditError::numeric("gaussian nll on non-finite input"));
    }
    let bound = T::lit(LOG_VAR_BOUND);
    let lv = log_var.max(-bound).min(bound);
    let r = s - mean;
    let half = T::half();
    Ok(half * (lv + r * r * (-lv).exp()) + half * T::lit(std::f64::consts::TAU).ln())
}

/// Gradient of [`gaussian_nll`] in `(mean, log_var)`. The log-variance
/// component is zero wherever the clamp is active.
pub fn gaussian_nll_grad<T: Scalar>(mean: T, log_var: T, s: T) -> (T, T) {
    let bound = T::lit(LOG_VAR_BOUND);
    let clamped = log_var < -bound || log_var > bound;
    let lv = log_var.max(-bound).min(bound);
    let inv_var = (-lv).exp();
    let r = s - mean;
    let d_mean = -r * inv_var;
    let d_lv = if clamped {
        T::zero()
    } else {
        T::half() * (T::one() - r * r * inv_var)
    };
    (d_mean, d_lv)
}

pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let m = logits.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let exps: Vec<T> = logits.iter().map(|&z| (z - m).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `-log softmax(logits)[y]` computed with max subtraction.
pub fn softmax_cross_entropy<T: Scalar>(logits: &[T], y: usize) -> Result<T> {
    if y >= logits.len() {
        return Err(AuditError::invalid(format!(
            "label {y} out of range for {} logits",
            logits.len()
        )));
    }
    let m = logits.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let lse = m + logits.iter().map(|&z| (z - m).exp()).sum::<T>().ln();
    Ok(lse - logits[y])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pinball_fixtures() {
        assert_eq!(pinball_loss(1.5, 1.5, 0.3).unwrap(), 0.0);
        assert!((pinball_loss(0.0, 1.0, 0.05).unwrap() - 0.95_f64).abs() < 1e-15);
        assert!((pinball_loss(1.0, 0.0, 0.05).unwrap() - 0.05_f64).abs() < 1e-15);
        assert!(pinball_loss(f64::NAN, 0.0, 0.05).is_err());
        assert!(pinball_loss(0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn gaussian_fixtures() {
        let half_log_tau = 0.5 * std::f64::consts::TAU.ln();
        assert!((gaussian_nll(0.3, 0.0, 0.3).unwrap() - half_log_tau).abs() < 1e-15);
        assert!((gaussian_nll(0.0, 0.0, 2.0).unwrap() - (2.0 + half_log_tau)).abs() < 1e-15);
        assert_eq!(gaussian_nll_grad(1.0, 0.7, 1.0).0, 0.0);
        // clamp freezes the variance gradient
        assert_eq!(gaussian_nll_grad(0.0, 12.0, 1.0).1, 0.0);
        assert!(gaussian_nll(0.0, f64::INFINITY, 1.0).is_err());
    }

    #[test]
    fn cross_entropy_fixtures() {
        let ce = softmax_cross_entropy(&[0.0f64; 4], 2).unwrap();
        assert!((ce - 4f64.ln()).abs() < 1e-15);
        let sat = softmax_cross_entropy(&[0.0f64, 1000.0, 0.0], 1).unwrap();
        assert!(sat.abs() < 1e-12);
        let v = softmax_cross_entropy(&[1.0f64, 2.0, 3.0], 0).unwrap();
        assert!((v - 2.407606).abs() < 1e-5);
        assert!(softmax_cross_entropy(&[1.0f64, 2.0], 2).is_err());
        // f32 path agrees
        let v32 = softmax_cross_entropy(&[1.0f32, 2.0, 3.0], 0).unwrap();
        assert!((v32 - 2.407606).abs() < 1e-5);
    }

    proptest! {
        #[test]
        fn pinball_is_nonnegative_and_convex(
            a in -10.0f64..10.0, b in -10.0f64..10.0, s in -10.0f64..10.0,
            lambda in 0.0f64..=1.0, alpha in 0.01f64..0.99,
        ) {
            let la = pinball_loss(a, s, alpha).unwrap();
            let lb = pinball_loss(b, s, alpha).unwrap();
            prop_assert!(la >= 0.0);
            let mix = pinball_loss(lambda * a + (1.0 - lambda) * b, s, alpha).unwrap();
            prop_assert!(mix <= lambda * la + (1.0 - lambda) * lb + 1e-12);
        }

        #[test]
        fn pinball_zero_only_at_target(p in -5.0f64..5.0, s in -5.0f64..5.0) {
            let l = pinball_loss(p, s, 0.2).unwrap();
            prop_assert_eq!(l == 0.0, p == s);
        }
    }
}
