use rand::Rng;

use crate::error::{AuditError, Result};
use crate::rng::rng_from_seed;
use crate::scalar::{all_finite, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }

    #[inline]
    fn apply<T: Scalar>(self, v: T) -> T {
        match self {
            Activation::Relu => v.max(T::zero()),
            Activation::Identity => v,
        }
    }
}

/// Affine map followed by an activation. `weights` is row-major
/// `rows x cols` with `rows` outputs and `cols` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

impl<T: Scalar> Layer<T> {
    pub fn zeros(rows: usize, cols: usize, activation: Activation) -> Self {
        Self {
            rows,
            cols,
            weights: vec![T::zero(); rows * cols],
            bias: vec![T::zero(); rows],
            activation,
        }
    }

    pub(crate) fn forward_into(&self, input: &[T], out: &mut Vec<T>) {
        out.clear();
        for r in 0..self.rows {
            let w = &self.weights[r * self.cols..(r + 1) * self.cols];
            let mut acc = self.bias[r];
            for (&wi, &xi) in w.iter().zip(input) {
                acc = acc + wi * xi;
            }
            out.push(self.activation.apply(acc));
        }
    }
}

/// Dense feed-forward network. The last layer is always linear (logits or
/// regression heads).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel<T> {
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> MlpModel<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Result<Self> {
        let last = layers
            .last()
            .ok_or_else(|| AuditError::invalid("model needs at least one layer"))?;
        if last.activation != Activation::Identity {
            return Err(AuditError::invalid("final layer activation must be identity"));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.rows == 0 {
                return Err(AuditError::invalid(format!("layer {i} has no outputs")));
            }
            if layer.weights.len() != layer.rows * layer.cols || layer.bias.len() != layer.rows {
                return Err(AuditError::invalid(format!("layer {i} parameter shape mismatch")));
            }
            if i > 0 && layers[i - 1].rows != layer.cols {
                return Err(AuditError::DimensionMismatch {
                    expected: layers[i - 1].rows,
                    got: layer.cols,
                });
            }
            if !all_finite(&layer.weights) || !all_finite(&layer.bias) {
                return Err(AuditError::numeric(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].rows
    }

    pub fn hidden_layer_count(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Logits (or regression outputs) for one input row.
    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.input_dim() {
            return Err(AuditError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: &[T]) -> Vec<T> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.forward_into(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Activations after the last hidden nonlinearity, i.e. the input to the
    /// output layer.
    pub fn penultimate(&self, x: &[T]) -> Result<Vec<T>> {
        if self.hidden_layer_count() == 0 {
            return Err(AuditError::invalid("model has no hidden layer"));
        }
        if x.len() != self.input_dim() {
            return Err(AuditError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers[..self.layers.len() - 1] {
            layer.forward_into(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Forward pass keeping every layer's post-activation output.
    /// `acts[0]` is the input and `acts[l + 1]` the output of layer `l`.
    pub(crate) fn forward_cached(&self, x: &[T], acts: &mut Vec<Vec<T>>) {
        acts.resize_with(self.layers.len() + 1, Vec::new);
        acts[0].clear();
        acts[0].extend_from_slice(x);
        for (l, layer) in self.layers.iter().enumerate() {
            let (head, tail) = acts.split_at_mut(l + 1);
            layer.forward_into(&head[l], &mut tail[0]);
        }
    }

    /// Accumulates parameter gradients for one sample given the gradient of
    /// the loss with respect to the network output.
    pub(crate) fn backward_accumulate(
        &self,
        acts: &[Vec<T>],
        d_out: &[T],
        grads: &mut Gradients<T>,
        delta: &mut Vec<T>,
        scratch: &mut Vec<T>,
    ) {
        delta.clear();
        delta.extend_from_slice(d_out);
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let out = &acts[l + 1];
            if layer.activation == Activation::Relu {
                for (d, &o) in delta.iter_mut().zip(out) {
                    if o <= T::zero() {
                        *d = T::zero();
                    }
                }
            }
            let input = &acts[l];
            let (gw, gb) = &mut grads.layers[l];
            for r in 0..layer.rows {
                let dr = delta[r];
                if dr == T::zero() {
                    continue;
                }
                gb[r] = gb[r] + dr;
                let row = &mut gw[r * layer.cols..(r + 1) * layer.cols];
                for (g, &xi) in row.iter_mut().zip(input) {
                    *g = *g + dr * xi;
                }
            }
            if l > 0 {
                scratch.clear();
                scratch.resize(layer.cols, T::zero());
                for r in 0..layer.rows {
                    let dr = delta[r];
                    if dr == T::zero() {
                        continue;
                    }
                    let row = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
                    for (s, &w) in scratch.iter_mut().zip(row) {
                        *s = *s + dr * w;
                    }
                }
                std::mem::swap(delta, scratch);
            }
        }
    }

    /// Parameters flattened layer by layer, weights before biases.
    pub fn params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[T]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(AuditError::DimensionMismatch {
                expected: self.param_count(),
                got: params.len(),
            });
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = it.next().unwrap_or_else(T::zero);
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| all_finite(&l.weights) && all_finite(&l.bias))
    }
}

/// Per-layer `(weights, bias)` gradient buffers shaped like a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(model: &MlpModel<T>) -> Self {
        Self {
            layers: model
                .layers()
                .iter()
                .map(|l| (vec![T::zero(); l.weights.len()], vec![T::zero(); l.bias.len()]))
                .collect(),
        }
    }

    pub fn reset(&mut self) {
        for (w, b) in &mut self.layers {
            w.iter_mut().for_each(|v| *v = T::zero());
            b.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn scale(&mut self, factor: T) {
        for (w, b) in &mut self.layers {
            w.iter_mut().chain(b.iter_mut()).for_each(|v| *v = *v * factor);
        }
    }

    /// Same flattening order as [`MlpModel::params`].
    pub fn flatten(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
            .collect()
    }
}

/// Hidden-layer widths of a ReLU network; the output layer is implied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub hidden: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
        }
    }
}

impl Architecture {
    pub fn new(hidden: Vec<usize>) -> Self {
        Self { hidden }
    }

    /// A single affine layer (no hidden units).
    pub fn linear() -> Self {
        Self { hidden: Vec::new() }
    }

    /// Builds a seeded model. ReLU layers use He-uniform initialization; the
    /// linear output layer uses LeCun-uniform.
    pub fn build<T: Scalar>(
        &self,
        input_dim: usize,
        output_dim: usize,
        seed: u64,
    ) -> Result<MlpModel<T>> {
        if self.hidden.contains(&0) {
            return Err(AuditError::invalid("hidden layer width must be >= 1"));
        }
        let mut rng = rng_from_seed(seed);
        let mut dims = vec![input_dim];
        dims.extend_from_slice(&self.hidden);
        dims.push(output_dim);
        let n_layers = dims.len() - 1;
        let layers = (0..n_layers)
            .map(|l| {
                let (cols, rows) = (dims[l], dims[l + 1]);
                let activation = if l + 1 == n_layers {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                let fan_in = cols.max(1) as f64;
                let limit = match activation {
                    Activation::Relu => (6.0 / fan_in).sqrt(),
                    Activation::Identity => (3.0 / fan_in).sqrt(),
                };
                let weights = (0..rows * cols)
                    .map(|_| T::lit(rng.random_range(-limit..limit)))
                    .collect();
                Layer {
                    rows,
                    cols,
                    weights,
                    bias: vec![T::zero(); rows],
                    activation,
                }
            })
            .collect();
        MlpModel::new(layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_model_outputs_zero() {
        let m = MlpModel::new(vec![
            Layer::<f64>::zeros(4, 3, Activation::Relu),
            Layer::zeros(2, 4, Activation::Identity),
        ])
        .unwrap();
        assert_eq!(m.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input() {
        let mut l = Layer::<f32>::zeros(3, 3, Activation::Identity);
        for i in 0..3 {
            l.weights[i * 3 + i] = 1.0;
        }
        let m = MlpModel::new(vec![l]).unwrap();
        assert_eq!(m.forward(&[0.5, -1.5, 2.0]).unwrap(), vec![0.5, -1.5, 2.0]);
    }

    #[test]
    fn two_layer_hand_fixture() {
        // h = relu([[1, -1], [2, 0.5]] x + [0, -1]); out = [3, -2] h + 0.5
        let hidden = Layer {
            rows: 2,
            cols: 2,
            weights: vec![1.0, -1.0, 2.0, 0.5],
            bias: vec![0.0, -1.0],
            activation: Activation::Relu,
        };
        let out = Layer {
            rows: 1,
            cols: 2,
            weights: vec![3.0, -2.0],
            bias: vec![0.5],
            activation: Activation::Identity,
        };
        let m = MlpModel::new(vec![hidden, out]).unwrap();
        // x = (2, 1): pre = (1, 3.5) -> h = (1, 3.5) -> 3 - 7 + 0.5
        assert_eq!(m.forward(&[2.0, 1.0]).unwrap(), vec![-3.5]);
        // x = (-1, 1): pre = (-2, -2.5) -> h = (0, 0) -> 0.5
        assert_eq!(m.forward(&[-1.0, 1.0]).unwrap(), vec![0.5]);
        assert_eq!(m.penultimate(&[2.0, 1.0]).unwrap(), vec![1.0, 3.5]);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(MlpModel::<f64>::new(vec![Layer::zeros(2, 2, Activation::Relu)]).is_err());
        assert!(MlpModel::<f64>::new(vec![
            Layer::zeros(3, 2, Activation::Relu),
            Layer::zeros(1, 4, Activation::Identity),
        ])
        .is_err());
        let m = Architecture::default().build::<f64>(5, 3, 1).unwrap();
        assert!(m.forward(&[0.0; 4]).is_err());
    }

    #[test]
    fn build_is_seeded() {
        let a = Architecture::new(vec![8]).build::<f64>(3, 2, 11).unwrap();
        let b = Architecture::new(vec![8]).build::<f64>(3, 2, 11).unwrap();
        let c = Architecture::new(vec![8]).build::<f64>(3, 2, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn params_round_trip() {
        let mut m = Architecture::new(vec![4]).build::<f64>(3, 2, 3).unwrap();
        let p: Vec<f64> = (0..m.param_count()).map(|i| i as f64).collect();
        m.set_params(&p).unwrap();
        assert_eq!(m.params(), p);
    }
}
