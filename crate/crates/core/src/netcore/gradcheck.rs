use crate::error::{AuditError, Result};
use crate::netcore::loss::{LossSpec, Targets};
use crate::netcore::model::{Activation, MlpModel};
use crate::netcore::train::batch_gradient;
use crate::scalar::Scalar;

/// Step for central differences.
pub const FD_STEP: f64 = 1e-5;
/// Samples closer than this to a pinball or ReLU kink are rejected.
pub const KINK_MARGIN: f64 = 1e-4;
/// Denominator floor for relative errors on vanishing gradient entries.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Flat parameter index of the worst entry.
    pub worst_param: usize,
    pub param_count: usize,
    pub passed: bool,
}

/// Compares the analytic batch gradient against central differences over
/// every parameter.
pub fn grad_check<T: Scalar>(
    loss: &LossSpec,
    model: &MlpModel<T>,
    inputs: &[T],
    targets: Targets<'_, T>,
    tol: f64,
) -> Result<GradCheckReport> {
    if let (LossSpec::Pinball { .. }, Targets::Scores(scores)) = (loss, &targets) {
        let d = model.input_dim();
        for (i, &s) in scores.iter().enumerate() {
            let x = inputs
                .get(i * d..(i + 1) * d)
                .ok_or(AuditError::DimensionMismatch {
                    expected: scores.len() * d,
                    got: inputs.len(),
                })?;
            let pred = model.forward(x)?[0];
            if (pred - s).abs().as_f64() < KINK_MARGIN {
                return Err(AuditError::invalid(format!(
                    "sample {i} lies within {KINK_MARGIN} of the pinball kink"
                )));
            }
        }
    }

    relu_kink_check(model, inputs)?;

    let (_, grads) = batch_gradient(model, inputs, targets, loss)?;
    let analytic = grads.flatten();
    let base = model.params();
    let mut probe = model.clone();
    let h = T::lit(FD_STEP);
    let mut params = base.clone();
    let mut worst = (0.0f64, 0usize);

    for k in 0..base.len() {
        params[k] = base[k] + h;
        probe.set_params(&params)?;
        let (plus, _) = batch_gradient(&probe, inputs, targets, loss)?;
        params[k] = base[k] - h;
        probe.set_params(&params)?;
        let (minus, _) = batch_gradient(&probe, inputs, targets, loss)?;
        params[k] = base[k];

        let numeric = ((plus - minus) / (h + h)).as_f64();
        let a = analytic[k].as_f64();
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        if rel > worst.0 || !rel.is_finite() {
            worst = (rel, k);
        }
    }
    Ok(GradCheckReport {
        max_rel_error: worst.0,
        worst_param: worst.1,
        param_count: base.len(),
        passed: worst.0 <= tol,
    })
}

/// Central differences are meaningless across a ReLU kink, so every hidden
/// pre-activation must stay [`KINK_MARGIN`] away from zero.
fn relu_kink_check<T: Scalar>(model: &MlpModel<T>, inputs: &[T]) -> Result<()> {
    let d = model.input_dim();
    if d == 0 || inputs.len() % d != 0 {
        return Err(AuditError::invalid("input rows do not match the model's input width"));
    }
    let mut next = Vec::new();
    for (i, x) in inputs.chunks(d).enumerate() {
        let mut cur = x.to_vec();
        for (l, layer) in model.layers().iter().enumerate() {
            if layer.activation == Activation::Relu {
                for r in 0..layer.rows {
                    let row = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
                    let z = row.iter().zip(&cur).fold(layer.bias[r], |a, (&w, &v)| a + w * v);
                    if z.abs().as_f64() < KINK_MARGIN {
                        return Err(AuditError::invalid(format!(
                            "sample {i}: unit {r} of layer {l} is within {KINK_MARGIN} of the ReLU kink"
                        )));
                    }
                }
            }
            layer.forward_into(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::model::Architecture;
    use rand::Rng;

    fn fixture(seed: u64, n: usize, d: usize) -> Vec<f64> {
        let mut rng = crate::rng::rng_from_seed(seed);
        (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn gaussian_and_cross_entropy_match_finite_differences() {
        let x = fixture(1, 6, 3);
        let m = Architecture::new(vec![5]).build::<f64>(3, 2, 2).unwrap();
        let s = [0.3, -1.2, 0.8, 2.0, -0.1, 0.5];
        let r = grad_check(&LossSpec::GaussianNll, &m, &x, Targets::Scores(&s), 1e-5).unwrap();
        assert!(r.passed, "{r:?}");
        let m = Architecture::new(vec![5]).build::<f64>(3, 4, 3).unwrap();
        let y = [0, 3, 1, 2, 2, 0];
        let r = grad_check(&LossSpec::SoftmaxCrossEntropy, &m, &x, Targets::Labels(&y), 1e-5)
            .unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn pinball_linear_gradient_matches_closed_form() {
        // d/dw mean PB = -mean[((1 - alpha) - 1{s < pred}) x], d/db the same with x = 1.
        let alpha = 0.05;
        let x = fixture(4, 8, 2);
        let m = Architecture::linear().build::<f64>(2, 1, 5).unwrap();
        let s: Vec<f64> = (0..8).map(|i| i as f64 * 0.3 - 1.0).collect();
        let (_, g) =
            batch_gradient(&m, &x, Targets::Scores(&s), &LossSpec::Pinball { alpha }).unwrap();
        let mut want = [0.0; 3];
        for i in 0..8 {
            let xi = &x[i * 2..i * 2 + 2];
            let pred = m.forward(xi).unwrap()[0];
            let ind = if s[i] < pred { 1.0 } else { 0.0 };
            let coef = -((1.0 - alpha) - ind) / 8.0;
            want[0] += coef * xi[0];
            want[1] += coef * xi[1];
            want[2] += coef;
        }
        let got = g.flatten();
        for k in 0..3 {
            assert!((got[k] - want[k]).abs() < 1e-15, "{got:?} vs {want:?}");
        }
        let r = grad_check(&LossSpec::Pinball { alpha }, &m, &x, Targets::Scores(&s), 1e-5).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn kink_proximity_is_reported() {
        let m = Architecture::linear().build::<f64>(1, 1, 5).unwrap();
        let pred = m.forward(&[1.0]).unwrap()[0];
        let err = grad_check(
            &LossSpec::Pinball { alpha: 0.1 },
            &m,
            &[1.0],
            Targets::Scores(&[pred + 1e-6]),
            1e-5,
        );
        assert!(err.is_err());
    }

    #[test]
    fn relu_kink_is_reported() {
        // second hidden unit sees a dead first layer, so its input is its zero bias
        let mut l1 = crate::netcore::Layer::zeros(1, 1, Activation::Relu);
        l1.weights = vec![-1.0];
        let mut l2 = crate::netcore::Layer::zeros(1, 1, Activation::Relu);
        l2.weights = vec![2.0];
        let mut out = crate::netcore::Layer::zeros(1, 1, Activation::Identity);
        out.weights = vec![1.0];
        let m = MlpModel::new(vec![l1, l2, out]).unwrap();
        let r = grad_check(&LossSpec::GaussianNll, &m, &[1.0], Targets::Scores(&[0.5]), 1e-5);
        assert!(r.is_err());
    }
}
