use serde::Serialize;

use crate::error::{AuditError, Result};
use crate::linalg::symmetric_eigen;
use crate::netcore::MlpModel;
use crate::scalar::{all_finite, Scalar};

/// Which distribution a set of embeddings was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    /// Seen classes (the attacker's training distribution).
    Seen,
    /// Every class (the query distribution).
    Full,
}

/// Row-major `n x dim` penultimate activations.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet<T> {
    pub rows: Vec<T>,
    pub dim: usize,
    pub source: EmbeddingSource,
}

impl<T: Scalar> EmbeddingSet<T> {
    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.rows.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }
}

/// Runs `inputs` (row-major, `predictor.input_dim()` columns) through every
/// hidden layer of `predictor`.
pub fn extract_embeddings<T: Scalar>(
    predictor: &MlpModel<T>,
    inputs: &[T],
    source: EmbeddingSource,
) -> Result<EmbeddingSet<T>> {
    let hidden = predictor.hidden_layer_count();
    if hidden == 0 {
        return Err(AuditError::invalid("embeddings need a model with a hidden layer"));
    }
    let in_dim = predictor.input_dim();
    if in_dim == 0 || inputs.len() % in_dim != 0 {
        return Err(AuditError::invalid("input rows do not match the predictor's input width"));
    }
    let dim = predictor.layers()[hidden - 1].rows;
    let mut rows = Vec::with_capacity(inputs.len() / in_dim * dim);
    for x in inputs.chunks(in_dim) {
        rows.extend(predictor.penultimate(x)?);
    }
    if !all_finite(&rows) {
        return Err(AuditError::numeric("non-finite embedding"));
    }
    Ok(EmbeddingSet { rows, dim, source })
}

/// Top-two principal components of a point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca2<T> {
    pub mean: Vec<T>,
    pub directions: [Vec<T>; 2],
    pub eigenvalues: [T; 2],
    /// `n x 2` projections of the centered rows.
    pub projected: Vec<[T; 2]>,
}

impl<T: Scalar> Pca2<T> {
    pub fn project(&self, x: &[T]) -> [T; 2] {
        let c = |d: &[T]| x.iter().zip(&self.mean).zip(d).fold(T::zero(), |a, ((&xi, &m), &di)| a + (xi - m) * di);
        [c(&self.directions[0]), c(&self.directions[1])]
    }
}

/// PCA on the sample covariance (divisor `n - 1`) of `rows`.
///
/// Each direction's first coordinate that is not negligible is made
/// positive.
pub fn pca2<T: Scalar>(rows: &[T], dim: usize) -> Result<Pca2<T>> {
    if dim < 2 {
        return Err(AuditError::invalid("pca2 needs at least two columns"));
    }
    if rows.len() % dim != 0 {
        return Err(AuditError::invalid("row buffer is not a whole number of rows"));
    }
    let n = rows.len() / dim;
    if n < 3 {
        return Err(AuditError::invalid("pca2 needs at least three rows"));
    }
    let mut mean = vec![T::zero(); dim];
    for x in rows.chunks(dim) {
        for (m, &v) in mean.iter_mut().zip(x) {
            *m = *m + v;
        }
    }
    let nf = T::lit(n as f64);
    mean.iter_mut().for_each(|m| *m = *m / nf);

    let mut cov = vec![T::zero(); dim * dim];
    let mut centered = vec![T::zero(); dim];
    for x in rows.chunks(dim) {
        for ((c, &v), &m) in centered.iter_mut().zip(x).zip(&mean) {
            *c = v - m;
        }
        for i in 0..dim {
            for j in i..dim {
                cov[i * dim + j] = cov[i * dim + j] + centered[i] * centered[j];
            }
        }
    }
    let denom = T::lit((n - 1) as f64);
    for i in 0..dim {
        for j in i..dim {
            let v = cov[i * dim + j] / denom;
            cov[i * dim + j] = v;
            cov[j * dim + i] = v;
        }
    }
    let (values, vectors) = symmetric_eigen(&cov, dim)?;
    let top = values[0];
    if !(top > T::zero()) {
        return Err(AuditError::numeric("pca2 on data without variance"));
    }
    let mut directions = [vectors[..dim].to_vec(), vectors[dim..2 * dim].to_vec()];
    let negligible = T::lit(1e-12);
    for (k, d) in directions.iter_mut().enumerate() {
        if let Some(&first) = d.iter().find(|v| v.abs() > negligible) {
            if first < T::zero() {
                d.iter_mut().for_each(|v| *v = -*v);
            }
        }
        let lambda = values[k];
        let residual = (0..dim)
            .map(|i| {
                let r = (0..dim).fold(T::zero(), |a, j| a + cov[i * dim + j] * d[j]) - lambda * d[i];
                r * r
            })
            .sum::<T>()
            .sqrt();
        // relative to the top eigenvalue so a null second direction passes
        if residual > T::lit(1e-6) * top {
            return Err(AuditError::numeric(format!("pca eigenpair {k} residual {residual:e} too large")));
        }
    }
    let mut pca = Pca2 {
        mean,
        directions,
        eigenvalues: [values[0], values[1].max(T::zero())],
        projected: Vec::with_capacity(n),
    };
    pca.projected = rows.chunks(dim).map(|x| pca.project(x)).collect();
    Ok(pca)
}
