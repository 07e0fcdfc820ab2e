use rand::seq::SliceRandom;

use crate::error::{AuditError, Result};
use crate::netcore::loss::{LossSpec, Targets};
use crate::netcore::model::{Gradients, MlpModel};
use crate::rng::rng_from_seed;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Sgd,
    Adam,
}

impl Optimizer {
    pub fn name(self) -> &'static str {
        match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sgd" => Some(Optimizer::Sgd),
            "adam" => Some(Optimizer::Adam),
            _ => None,
        }
    }
}

/// Minibatch first-order optimizer settings.
#[derive(Debug, Clone, PartialEq)]
pub struct OptConfig {
    pub algorithm: Optimizer,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            algorithm: Optimizer::Adam,
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 60,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(AuditError::invalid("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(AuditError::invalid("batch size must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(AuditError::invalid("adam betas must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

fn check_shapes<T: Scalar>(
    model: &MlpModel<T>,
    inputs: &[T],
    targets: &Targets<'_, T>,
    loss: &LossSpec,
) -> Result<usize> {
    loss.validate()?;
    let n = targets.len();
    if inputs.len() != n * model.input_dim() {
        return Err(AuditError::DimensionMismatch {
            expected: n * model.input_dim(),
            got: inputs.len(),
        });
    }
    let want = match (loss, targets) {
        (LossSpec::SoftmaxCrossEntropy, Targets::Labels(labels)) => {
            if let Some(&y) = labels.iter().find(|&&y| y >= model.output_dim()) {
                return Err(AuditError::invalid(format!(
                    "label {y} outside model output width {}",
                    model.output_dim()
                )));
            }
            model.output_dim()
        }
        (LossSpec::SoftmaxCrossEntropy, Targets::Scores(_)) => {
            return Err(AuditError::invalid("cross-entropy needs integer labels"))
        }
        (_, Targets::Labels(_)) => {
            return Err(AuditError::invalid("regression losses need scalar score targets"))
        }
        (other, Targets::Scores(_)) => other.output_dim(0),
    };
    if model.output_dim() != want {
        return Err(AuditError::DimensionMismatch {
            expected: want,
            got: model.output_dim(),
        });
    }
    Ok(n)
}

struct Workspace<T> {
    acts: Vec<Vec<T>>,
    d_out: Vec<T>,
    delta: Vec<T>,
    scratch: Vec<T>,
}

impl<T: Scalar> Workspace<T> {
    fn new() -> Self {
        Self {
            acts: Vec::new(),
            d_out: Vec::new(),
            delta: Vec::new(),
            scratch: Vec::new(),
        }
    }
}

/// Accumulates summed loss and summed gradients over `rows`.
fn accumulate<T: Scalar>(
    model: &MlpModel<T>,
    inputs: &[T],
    targets: &Targets<'_, T>,
    loss: &LossSpec,
    rows: &[usize],
    grads: &mut Gradients<T>,
    ws: &mut Workspace<T>,
) -> Result<T> {
    let d = model.input_dim();
    let mut total = T::zero();
    for &i in rows {
        model.forward_cached(&inputs[i * d..(i + 1) * d], &mut ws.acts);
        let out = ws.acts.last().expect("forward cache has an output");
        let l = loss.eval(out, targets.get(i), &mut ws.d_out)?;
        total = total + l;
        model.backward_accumulate(&ws.acts, &ws.d_out, grads, &mut ws.delta, &mut ws.scratch);
    }
    Ok(total)
}

/// Mean loss and mean parameter gradient over the whole batch.
pub fn batch_gradient<T: Scalar>(
    model: &MlpModel<T>,
    inputs: &[T],
    targets: Targets<'_, T>,
    loss: &LossSpec,
) -> Result<(T, Gradients<T>)> {
    let n = check_shapes(model, inputs, &targets, loss)?;
    if n == 0 {
        return Err(AuditError::invalid("empty batch"));
    }
    let mut grads = Gradients::zeros_like(model);
    let rows: Vec<usize> = (0..n).collect();
    let total = accumulate(model, inputs, &targets, loss, &rows, &mut grads, &mut Workspace::new())?;
    let inv = T::one() / T::lit(n as f64);
    grads.scale(inv);
    Ok((total * inv, grads))
}

/// Trains a copy of `model` and returns it with the per-epoch mean loss.
///
/// Rows are reshuffled every epoch from a stream seeded by `opt.seed`, so the
/// result is a pure function of `(model, inputs, targets, loss, opt)`.
pub fn train<T: Scalar>(
    model: &MlpModel<T>,
    inputs: &[T],
    targets: Targets<'_, T>,
    loss: &LossSpec,
    opt: &OptConfig,
) -> Result<(MlpModel<T>, Vec<T>)> {
    opt.validate()?;
    let n = check_shapes(model, inputs, &targets, loss)?;
    let mut model = model.clone();
    if opt.epochs == 0 {
        return Ok((model, Vec::new()));
    }
    if n == 0 {
        return Err(AuditError::invalid("cannot train on an empty dataset"));
    }

    let mut rng = rng_from_seed(opt.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut grads = Gradients::zeros_like(&model);
    let mut ws = Workspace::new();
    let mut m1 = Gradients::zeros_like(&model);
    let mut m2 = Gradients::zeros_like(&model);
    let lr = T::lit(opt.learning_rate);
    let (b1, b2, eps) = (T::lit(opt.beta1), T::lit(opt.beta2), T::lit(opt.epsilon));
    let mut step: i32 = 0;
    let mut trace = Vec::with_capacity(opt.epochs);

    for epoch in 0..opt.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = T::zero();
        for batch in order.chunks(opt.batch_size) {
            grads.reset();
            let batch_loss =
                accumulate(&model, inputs, &targets, loss, batch, &mut grads, &mut ws)?;
            if !batch_loss.is_finite() {
                return Err(AuditError::numeric(format!(
                    "non-finite loss in epoch {epoch} at step {step}"
                )));
            }
            epoch_loss = epoch_loss + batch_loss;
            grads.scale(T::one() / T::lit(batch.len() as f64));
            step += 1;

            match opt.algorithm {
                Optimizer::Sgd => {
                    for (layer, (gw, gb)) in model.layers_mut().iter_mut().zip(&grads.layers) {
                        for (p, &g) in layer.weights.iter_mut().zip(gw) {
                            *p = *p - lr * g;
                        }
                        for (p, &g) in layer.bias.iter_mut().zip(gb) {
                            *p = *p - lr * g;
                        }
                    }
                }
                Optimizer::Adam => {
                    let c1 = T::one() - b1.powi(step);
                    let c2 = T::one() - b2.powi(step);
                    let layers = model.layers_mut().iter_mut();
                    for (((layer, (gw, gb)), (mw, mb)), (vw, vb)) in layers
                        .zip(&grads.layers)
                        .zip(m1.layers.iter_mut())
                        .zip(m2.layers.iter_mut())
                    {
                        adam_update(&mut layer.weights, gw, mw, vw, lr, b1, b2, eps, c1, c2);
                        adam_update(&mut layer.bias, gb, mb, vb, lr, b1, b2, eps, c1, c2);
                    }
                }
            }
        }
        trace.push(epoch_loss / T::lit(n as f64));
    }
    if !model.is_finite() {
        return Err(AuditError::numeric("training produced non-finite parameters"));
    }
    Ok((model, trace))
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn adam_update<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    m: &mut [T],
    v: &mut [T],
    lr: T,
    b1: T,
    b2: T,
    eps: T,
    c1: T,
    c2: T,
) {
    for (((p, &g), mi), vi) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        *mi = b1 * *mi + (T::one() - b1) * g;
        *vi = b2 * *vi + (T::one() - b2) * g * g;
        let mhat = *mi / c1;
        let vhat = *vi / c2;
        *p = *p - lr * mhat / (vhat.sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::model::Architecture;

    #[test]
    fn zero_epochs_returns_model_unchanged() {
        let m = Architecture::new(vec![4]).build::<f64>(2, 3, 1).unwrap();
        let opt = OptConfig {
            epochs: 0,
            ..OptConfig::default()
        };
        let (out, trace) = train(
            &m,
            &[0.0, 1.0],
            Targets::Labels(&[2]),
            &LossSpec::SoftmaxCrossEntropy,
            &opt,
        )
        .unwrap();
        assert_eq!(out, m);
        assert!(trace.is_empty());
    }

    #[test]
    fn pinball_median_on_constant_targets() {
        // A bias-only model on targets that are all 2.5: the median is 2.5.
        let m = Architecture::linear().build::<f64>(0, 1, 0).unwrap();
        let scores = vec![2.5; 64];
        let opt = OptConfig {
            learning_rate: 0.05,
            batch_size: 64,
            epochs: 400,
            ..OptConfig::default()
        };
        let (m, _) = train(&m, &[], Targets::Scores(&scores), &LossSpec::Pinball { alpha: 0.5 }, &opt)
            .unwrap();
        let opt = OptConfig {
            learning_rate: 1e-4,
            epochs: 200,
            ..opt
        };
        let (m, _) = train(&m, &[], Targets::Scores(&scores), &LossSpec::Pinball { alpha: 0.5 }, &opt)
            .unwrap();
        let pred = m.forward(&[]).unwrap()[0];
        assert!((pred - 2.5).abs() < 1e-3, "pred {pred}");
    }

    #[test]
    fn training_is_deterministic() {
        let m = Architecture::new(vec![6]).build::<f64>(2, 2, 4).unwrap();
        let x = [0.0, 1.0, 1.0, 0.0, 0.5, 0.5, -1.0, 0.2];
        let y = [0, 1, 0, 1];
        let opt = OptConfig {
            epochs: 5,
            batch_size: 2,
            ..OptConfig::default()
        };
        let a = train(&m, &x, Targets::Labels(&y), &LossSpec::SoftmaxCrossEntropy, &opt).unwrap();
        let b = train(&m, &x, Targets::Labels(&y), &LossSpec::SoftmaxCrossEntropy, &opt).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mismatched_targets_are_rejected() {
        let m = Architecture::linear().build::<f64>(2, 1, 0).unwrap();
        let opt = OptConfig::default();
        assert!(train(&m, &[0.0, 1.0], Targets::Labels(&[0]), &LossSpec::Pinball { alpha: 0.1 }, &opt).is_err());
        assert!(train(&m, &[0.0], Targets::Scores(&[0.0]), &LossSpec::Pinball { alpha: 0.1 }, &opt).is_err());
        assert!(train(&m, &[0.0, 1.0], Targets::Scores(&[0.0]), &LossSpec::GaussianNll, &opt).is_err());
    }

    #[test]
    fn nan_targets_abort_training() {
        let m = Architecture::linear().build::<f64>(1, 2, 0).unwrap();
        let err = train(
            &m,
            &[1.0, 2.0],
            Targets::Scores(&[0.0, f64::NAN]),
            &LossSpec::GaussianNll,
            &OptConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, AuditError::Numeric(_)), "{err}");
    }
}
