use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{AuditError, Result};
use crate::linalg::{cholesky, cholesky_solve};
use crate::rng::rng_from_seed;
use crate::scalar::{dot, Scalar};

/// Deviation above which a transfer check is flagged.
pub const TRANSFER_TOLERANCE: f64 = 0.02;
pub const RANDOM_DIRECTIONS: usize = 64;

/// Fraction of rows with `score > threshold`, i.e. the realized FPR when
/// the rows are nonmembers.
pub fn exceedance_rate<T: Scalar>(scores: &[T], thresholds: &[T]) -> f64 {
    let hits = scores.iter().zip(thresholds).filter(|(s, q)| s > q).count();
    hits as f64 / scores.len().max(1) as f64
}

/// Standard basis of `dim`, then `RANDOM_DIRECTIONS` seeded unit vectors,
/// then `extra` (typically the fitted ratio direction) if given.
pub fn default_directions<T: Scalar>(dim: usize, seed: u64, extra: Option<&[T]>) -> Vec<Vec<T>> {
    let mut out: Vec<Vec<T>> = (0..dim)
        .map(|i| (0..dim).map(|j| if i == j { T::one() } else { T::zero() }).collect())
        .collect();
    let mut rng = rng_from_seed(seed);
    while out.len() < dim + RANDOM_DIRECTIONS {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            out.push(v.iter().map(|x| T::lit(x / norm)).collect());
        }
    }
    if let Some(v) = extra {
        out.push(v.to_vec());
    }
    out
}

/// `max_w |mean_i <w, phi_i> (1{s_i > q_i} - alpha)|` over `directions`.
///
/// With a constant feature in `phi`, the direction selecting it yields
/// `|FPR - alpha|`.
pub fn multiaccuracy_audit<T: Scalar>(
    phi: &[T],
    dim: usize,
    scores: &[T],
    thresholds: &[T],
    directions: &[Vec<T>],
    alpha: f64,
) -> Result<f64> {
    let n = scores.len();
    if n == 0 || thresholds.len() != n || phi.len() != n * dim {
        return Err(AuditError::invalid("audit inputs disagree in length"));
    }
    if directions.is_empty() || directions.iter().any(|w| w.len() != dim) {
        return Err(AuditError::invalid("audit needs directions of the embedding width"));
    }
    // residual-weighted mean embedding; every direction is a dot with it
    let mut m = vec![0.0f64; dim];
    for ((x, s), q) in phi.chunks(dim).zip(scores).zip(thresholds) {
        let e = if s > q { 1.0 - alpha } else { -alpha };
        for (mj, xj) in m.iter_mut().zip(x) {
            *mj += xj.as_f64() * e;
        }
    }
    m.iter_mut().for_each(|v| *v /= n as f64);
    Ok(directions
        .iter()
        .map(|w| w.iter().zip(&m).map(|(a, b)| a.as_f64() * b).sum::<f64>().abs())
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransferCheck {
    /// Exceedance rate on the attacker's distribution.
    pub coverage_p: f64,
    /// Exceedance rate on the query distribution.
    pub coverage_q: f64,
    /// `|coverage_q - alpha|`.
    pub deviation: f64,
    pub flagged: bool,
}

pub fn fpr_transfer_check<T: Scalar>(
    scores_p: &[T],
    thresholds_p: &[T],
    scores_q: &[T],
    thresholds_q: &[T],
    alpha: f64,
) -> Result<TransferCheck> {
    if scores_p.is_empty() || scores_q.is_empty() || scores_p.len() != thresholds_p.len() || scores_q.len() != thresholds_q.len() {
        return Err(AuditError::invalid("transfer check needs matching nonempty score and threshold lists"));
    }
    let coverage_p = exceedance_rate(scores_p, thresholds_p);
    let coverage_q = exceedance_rate(scores_q, thresholds_q);
    let deviation = (coverage_q - alpha).abs();
    Ok(TransferCheck {
        coverage_p,
        coverage_q,
        deviation,
        flagged: deviation > TRANSFER_TOLERANCE,
    })
}

/// Linear `(1 - alpha)`-quantile regression `q(x) = <phi(x), beta>` by
/// iteratively reweighted least squares on the check loss.
pub fn pinball_erm_linear<T: Scalar>(phi: &[T], dim: usize, scores: &[T], alpha: f64) -> Result<Vec<T>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(AuditError::invalid("alpha must lie in (0, 1)"));
    }
    let n = scores.len();
    if dim == 0 || phi.len() != n * dim || n < dim {
        return Err(AuditError::invalid("pinball fit needs at least dim rows of phi"));
    }
    let tau = 1.0 - alpha;
    let x: Vec<f64> = phi.iter().map(|v| v.as_f64()).collect();
    let s: Vec<f64> = scores.iter().map(|v| v.as_f64()).collect();
    let mut beta = vec![0.0; dim];
    let mut weights = vec![1.0; n];
    for _ in 0..500 {
        let mut gram = vec![0.0; dim * dim];
        let mut rhs = vec![0.0; dim];
        for ((row, &y), &w) in x.chunks(dim).zip(&s).zip(&weights) {
            for i in 0..dim {
                rhs[i] += w * row[i] * y;
                for j in i..dim {
                    gram[i * dim + j] += w * row[i] * row[j];
                }
            }
        }
        let trace = (0..dim).map(|i| gram[i * dim + i]).sum::<f64>() / dim as f64;
        for i in 0..dim {
            for j in 0..i {
                gram[i * dim + j] = gram[j * dim + i];
            }
            gram[i * dim + i] += 1e-12 * trace;
        }
        let next = cholesky_solve(&cholesky(&gram, dim)?, dim, &rhs);
        let change = next.iter().zip(&beta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        beta = next;
        for ((w, row), &y) in weights.iter_mut().zip(x.chunks(dim)).zip(&s) {
            let r = y - dot(row, &beta);
            let side = if r >= 0.0 { tau } else { 1.0 - tau };
            *w = side / r.abs().max(1e-7);
        }
        if change < 1e-12 {
            break;
        }
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(AuditError::numeric("pinball fit diverged"));
    }
    Ok(beta.into_iter().map(T::lit).collect())
}
