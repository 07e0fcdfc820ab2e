use crate::attacks::marginal::order_statistic_threshold;
use crate::attacks::normal::inverse_normal_cdf;
use crate::dataspace::LabeledDataset;
use crate::error::{AuditError, Result};
use crate::netcore::{self, Architecture, LossSpec, MlpModel, OptConfig, Targets, LOG_VAR_BOUND};
use crate::scalar::Scalar;
use crate::scores::ScoreFn;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantileMode {
    /// Two heads `(mean, log_var)`; the quantile is derived at predict time.
    Gaussian,
    /// One head trained directly with the pinball loss.
    Pinball,
}

impl QuantileMode {
    pub fn name(self) -> &'static str {
        match self {
            QuantileMode::Gaussian => "gaussian",
            QuantileMode::Pinball => "pinball",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gaussian" => Some(QuantileMode::Gaussian),
            "pinball" => Some(QuantileMode::Pinball),
            _ => None,
        }
    }
}

/// Function class of the quantile predictor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QuantileArch {
    /// Input-free predictor: a single trainable constant per head.
    Constant,
    /// ReLU network over the raw feature vector.
    Network(Architecture),
}

/// Per-example threshold model `q_alpha(x)`.
///
/// The network is trained on standardized scores; `offset` and `scale` map
/// its outputs back to the score scale. In pinball mode the output bias is
/// folded into `offset` after training.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileAttack<T> {
    pub predictor: MlpModel<T>,
    pub mode: QuantileMode,
    pub alpha: f64,
    pub score_fn: ScoreFn,
    pub offset: T,
    pub scale: T,
}

/// Trains a label-free quantile predictor on the public set's target scores.
///
/// Pinball mode minimizes the check loss at level `1 - alpha` and then
/// re-solves the output intercept exactly: it becomes the
/// `ceil((1 - alpha)(n + 1))`-th order statistic of the residuals, the same
/// rule the marginal attack uses. A constant predictor therefore reproduces
/// the marginal threshold bit for bit.
#[allow(clippy::too_many_arguments)]
pub fn qr_train<T: Scalar>(
    public: &LabeledDataset<T>,
    target: &MlpModel<T>,
    score_fn: ScoreFn,
    mode: QuantileMode,
    alpha: f64,
    arch: &QuantileArch,
    opt: &OptConfig,
    init_seed: u64,
) -> Result<QuantileAttack<T>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(AuditError::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let scores = (0..public.len())
        .map(|i| score_fn.score(&target.forward(public.row(i))?, public.label(i)))
        .collect::<Result<Vec<T>>>()?;
    let inputs: &[T] = match arch {
        QuantileArch::Constant => &[],
        QuantileArch::Network(_) => public.features(),
    };
    fit_on_scores(inputs, &scores, public.dim(), score_fn, mode, alpha, arch, opt, init_seed)
}

/// Same as [`qr_train`] with precomputed scores. `inputs` is row-major with
/// `input_dim` columns, or empty for [`QuantileArch::Constant`].
#[allow(clippy::too_many_arguments)]
pub fn fit_on_scores<T: Scalar>(
    inputs: &[T],
    scores: &[T],
    input_dim: usize,
    score_fn: ScoreFn,
    mode: QuantileMode,
    alpha: f64,
    arch: &QuantileArch,
    opt: &OptConfig,
    init_seed: u64,
) -> Result<QuantileAttack<T>> {
    if scores.is_empty() {
        return Err(AuditError::invalid("quantile attack needs public scores"));
    }
    let n = scores.len();
    let mean = scores.iter().copied().sum::<T>() / T::lit(n as f64);
    let var = scores.iter().map(|&s| (s - mean) * (s - mean)).sum::<T>() / T::lit(n as f64);
    let scale = if var > T::lit(1e-24) { var.sqrt() } else { T::one() };
    let standardized: Vec<T> = scores.iter().map(|&s| (s - mean) / scale).collect();

    let heads = match mode {
        QuantileMode::Gaussian => 2,
        QuantileMode::Pinball => 1,
    };
    let (init, feature_dim) = match arch {
        QuantileArch::Constant => (Architecture::linear().build(0, heads, init_seed)?, 0),
        QuantileArch::Network(a) => (a.build(input_dim, heads, init_seed)?, input_dim),
    };
    let loss = match mode {
        QuantileMode::Gaussian => LossSpec::GaussianNll,
        QuantileMode::Pinball => LossSpec::Pinball { alpha },
    };
    let (mut predictor, _) = netcore::train(&init, inputs, Targets::Scores(&standardized), &loss, opt)?;

    let offset = match mode {
        QuantileMode::Gaussian => mean,
        QuantileMode::Pinball => {
            let last = predictor.layers().len() - 1;
            predictor.layers_mut()[last].bias[0] = T::zero();
            let residuals = (0..n)
                .map(|i| {
                    let x = &inputs[i * feature_dim..(i + 1) * feature_dim];
                    Ok(scores[i] - scale * predictor.forward(x)?[0])
                })
                .collect::<Result<Vec<T>>>()?;
            order_statistic_threshold(&residuals, alpha)?
        }
    };
    Ok(QuantileAttack {
        predictor,
        mode,
        alpha,
        score_fn,
        offset,
        scale,
    })
}

impl<T: Scalar> QuantileAttack<T> {
    fn input<'a>(&self, x: &'a [T]) -> &'a [T] {
        if self.predictor.input_dim() == 0 {
            &[]
        } else {
            x
        }
    }

    /// Predicted `(mean, sigma)` of the nonmember score at `x` (Gaussian mode).
    pub fn gaussian_params(&self, x: &[T]) -> Result<(T, T)> {
        if self.mode != QuantileMode::Gaussian {
            return Err(AuditError::invalid("gaussian parameters need gaussian mode"));
        }
        let out = self.predictor.forward(self.input(x))?;
        let bound = T::lit(LOG_VAR_BOUND);
        let lv = out[1].max(-bound).min(bound);
        Ok((self.offset + self.scale * out[0], self.scale * (lv * T::half()).exp()))
    }

    /// `q_alpha(x)`: member iff the score is strictly above it.
    pub fn threshold(&self, x: &[T]) -> Result<T> {
        match self.mode {
            QuantileMode::Gaussian => {
                let (mean, sigma) = self.gaussian_params(x)?;
                let z = inverse_normal_cdf(1.0 - self.alpha);
                Ok(mean + sigma * T::lit(z))
            }
            QuantileMode::Pinball => {
                let out = self.predictor.forward(self.input(x))?;
                Ok(self.offset + self.scale * out[0])
            }
        }
    }

    /// Re-targets a Gaussian-mode attack to another FPR without retraining.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        if self.mode != QuantileMode::Gaussian {
            return Err(AuditError::invalid(
                "pinball predictors are trained for one alpha; refit instead",
            ));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(AuditError::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        Ok(Self {
            alpha,
            ..self.clone()
        })
    }

    /// `(s > q_alpha(x), s - q_alpha(x))`.
    pub fn predict(&self, x: &[T], score: T) -> Result<(bool, T)> {
        let q = self.threshold(x)?;
        Ok((score > q, score - q))
    }
}

pub fn qr_threshold<T: Scalar>(attack: &QuantileAttack<T>, x: &[T]) -> Result<T> {
    attack.threshold(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::{Activation, Layer};
    use crate::scores::ScoreKind;

    fn fixed_gaussian(mean: f64, log_var: f64, alpha: f64) -> QuantileAttack<f64> {
        let mut layer = Layer::zeros(2, 0, Activation::Identity);
        layer.bias = vec![mean, log_var];
        QuantileAttack {
            predictor: MlpModel::new(vec![layer]).unwrap(),
            mode: QuantileMode::Gaussian,
            alpha,
            score_fn: ScoreFn::new(ScoreKind::TopTwoMargin),
            offset: 0.0,
            scale: 1.0,
        }
    }

    #[test]
    fn gaussian_threshold_fixtures() {
        assert_eq!(fixed_gaussian(0.7, 1.3, 0.5).threshold(&[]).unwrap(), 0.7);
        let q = fixed_gaussian(0.0, 0.0, 0.05).threshold(&[]).unwrap();
        assert!((q - 1.6449).abs() < 1e-4, "{q}");
        let base = fixed_gaussian(0.2, 0.4, 0.5);
        let mut prev = f64::INFINITY;
        for alpha in [0.001, 0.01, 0.05, 0.2, 0.5, 0.8] {
            let q = base.with_alpha(alpha).unwrap().threshold(&[]).unwrap();
            assert!(q < prev);
            prev = q;
        }
    }

    #[test]
    fn at_threshold_is_nonmember_with_zero_score() {
        let a = fixed_gaussian(1.0, 0.0, 0.5);
        assert_eq!(a.predict(&[], 1.0).unwrap(), (false, 0.0));
    }

    #[test]
    fn zero_epochs_keeps_initialization() {
        let x: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let s: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let arch = QuantileArch::Network(Architecture::new(vec![3]));
        let opt = OptConfig { epochs: 0, ..OptConfig::default() };
        let a = fit_on_scores(&x, &s, 2, ScoreFn::new(ScoreKind::TopTwoMargin), QuantileMode::Gaussian, 0.1, &arch, &opt, 9)
            .unwrap();
        let init: MlpModel<f64> = Architecture::new(vec![3]).build(2, 2, 9).unwrap();
        assert_eq!(a.predictor, init);
    }

    #[test]
    fn pinball_mode_rejects_retargeting() {
        let s = [1.0, 2.0, 3.0];
        let opt = OptConfig { epochs: 1, ..OptConfig::default() };
        let a = fit_on_scores(&[], &s, 0, ScoreFn::new(ScoreKind::TopTwoMargin), QuantileMode::Pinball, 0.1, &QuantileArch::Constant, &opt, 0)
            .unwrap();
        assert!(a.with_alpha(0.2).is_err());
        assert_eq!(a.threshold(&[5.0]).unwrap(), 3.0);
    }
}
