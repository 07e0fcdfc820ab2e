use rand::Rng;
use serde::Serialize;

use crate::error::{AuditError, Result};
use crate::rng::{derive_seed, rng_from_seed};
use crate::scalar::Scalar;

pub const COVARIANCE_FLOOR: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 500;
/// Stop once the mean per-point log-likelihood improves by less than this.
pub const TOLERANCE: f64 = 1e-7;
pub const MAX_RESTARTS: usize = 5;
/// Consecutive floored M-steps treated as a collapsing component.
const COLLAPSE_STREAK: usize = 10;

/// One 2-D Gaussian. `covariance` is `[[a, b], [b, c]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GmmComponent<T> {
    pub weight: T,
    pub mean: [T; 2],
    pub covariance: [[T; 2]; 2],
}

impl<T: Scalar> GmmComponent<T> {
    fn log_density(&self, p: [T; 2]) -> T {
        let [[a, b], [_, c]] = self.covariance;
        let det = a * c - b * b;
        let (dx, dy) = (p[0] - self.mean[0], p[1] - self.mean[1]);
        let quad = (c * dx * dx - (b + b) * dx * dy + a * dy * dy) / det;
        -T::lit((2.0 * std::f64::consts::PI).ln()) - T::half() * det.ln() - T::half() * quad
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Gmm<T> {
    pub components: Vec<GmmComponent<T>>,
    /// Mean per-point log-likelihood before each M-step; the last entry
    /// belongs to the returned parameters.
    pub log_likelihood_trace: Vec<T>,
    pub restarts: usize,
}

impl<T: Scalar> Gmm<T> {
    /// Mixture with given components, checked for positive weights summing to
    /// one and positive definite covariances.
    pub fn new(components: Vec<GmmComponent<T>>) -> Result<Self> {
        if components.is_empty() {
            return Err(AuditError::invalid("mixture needs a component"));
        }
        let total = components.iter().map(|c| c.weight).sum::<T>();
        if components.iter().any(|c| !(c.weight > T::zero())) || (total - T::one()).abs() > T::lit(1e-9) {
            return Err(AuditError::invalid("mixture weights must be positive and sum to 1"));
        }
        for c in &components {
            let [[a, b], [b2, d]] = c.covariance;
            if b != b2 || !(a > T::zero()) || !(a * d - b * b > T::zero()) {
                return Err(AuditError::invalid("covariance must be symmetric positive definite"));
            }
        }
        Ok(Self {
            components,
            log_likelihood_trace: Vec::new(),
            restarts: 0,
        })
    }

    pub fn log_density(&self, p: [T; 2]) -> T {
        log_sum_exp(self.components.iter().map(|c| c.weight.ln() + c.log_density(p)))
    }

    pub fn density(&self, p: [T; 2]) -> T {
        self.log_density(p).exp()
    }

    /// Mean per-point log-likelihood of the final parameters.
    pub fn log_likelihood(&self) -> Option<T> {
        self.log_likelihood_trace.last().copied()
    }
}

fn log_sum_exp<T: Scalar>(terms: impl Iterator<Item = T> + Clone) -> T {
    let m = terms.clone().fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() {
        return m;
    }
    m + terms.map(|t| (t - m).exp()).sum::<T>().ln()
}

/// Raises eigenvalues of a symmetric 2x2 matrix to the floor. Returns
/// whether the floor was active.
fn floor_covariance<T: Scalar>(cov: &mut [[T; 2]; 2]) -> bool {
    let floor = T::lit(COVARIANCE_FLOOR);
    let [[a, b], [_, c]] = *cov;
    let mid = (a + c) * T::half();
    let rad = ((a - c) * T::half() * ((a - c) * T::half()) + b * b).sqrt();
    let (l1, l2) = (mid + rad, mid - rad);
    if l2 >= floor {
        return false;
    }
    let (f1, f2) = (l1.max(floor), l2.max(floor));
    if b == T::zero() {
        *cov = [[a.max(floor), T::zero()], [T::zero(), c.max(floor)]];
        return true;
    }
    // unit eigenvector of l1
    let (vx, vy) = (b, l1 - a);
    let norm = (vx * vx + vy * vy).sqrt();
    let (ux, uy) = (vx / norm, vy / norm);
    let off = (f1 - f2) * ux * uy;
    *cov = [[f1 * ux * ux + f2 * uy * uy, off], [off, f1 * uy * uy + f2 * ux * ux]];
    true
}

fn kmeans_pp<T: Scalar>(points: &[[T; 2]], k: usize, seed: u64) -> Vec<[T; 2]> {
    let mut rng = rng_from_seed(seed);
    let mut centers = vec![points[rng.random_range(0..points.len())]];
    let d2 = |p: [T; 2], c: [T; 2]| (p[0] - c[0]) * (p[0] - c[0]) + (p[1] - c[1]) * (p[1] - c[1]);
    let mut dist: Vec<f64> = points.iter().map(|&p| d2(p, centers[0]).as_f64()).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let idx = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &d) in dist.iter().enumerate() {
                if u < d {
                    chosen = i;
                    break;
                }
                u -= d;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[idx];
        centers.push(c);
        for (d, &p) in dist.iter_mut().zip(points) {
            *d = d.min(d2(p, c).as_f64());
        }
    }
    centers
}

fn moments<T: Scalar>(points: &[[T; 2]], weights: impl Fn(usize) -> T) -> (T, [T; 2], [[T; 2]; 2]) {
    let mut total = T::zero();
    let mut mean = [T::zero(); 2];
    for (i, p) in points.iter().enumerate() {
        let w = weights(i);
        total = total + w;
        mean[0] = mean[0] + w * p[0];
        mean[1] = mean[1] + w * p[1];
    }
    mean = [mean[0] / total, mean[1] / total];
    let mut cov = [[T::zero(); 2]; 2];
    for (i, p) in points.iter().enumerate() {
        let w = weights(i);
        let (dx, dy) = (p[0] - mean[0], p[1] - mean[1]);
        cov[0][0] = cov[0][0] + w * dx * dx;
        cov[0][1] = cov[0][1] + w * dx * dy;
        cov[1][1] = cov[1][1] + w * dy * dy;
    }
    cov[0][0] = cov[0][0] / total;
    cov[0][1] = cov[0][1] / total;
    cov[1][1] = cov[1][1] / total;
    cov[1][0] = cov[0][1];
    (total, mean, cov)
}

/// One EM run; `None` when a component collapses.
fn em<T: Scalar>(points: &[[T; 2]], k: usize, seed: u64) -> Option<Gmm<T>> {
    let n = points.len();
    let (_, _, mut global) = moments(points, |_| T::one());
    floor_covariance(&mut global);
    let mut comps: Vec<GmmComponent<T>> = kmeans_pp(points, k, seed)
        .into_iter()
        .map(|mean| GmmComponent {
            weight: T::one() / T::lit(k as f64),
            mean,
            covariance: global,
        })
        .collect();
    let mut resp = vec![T::zero(); n * k];
    let mut trace = Vec::new();
    let mut streak = 0;
    for _ in 0..MAX_ITERATIONS {
        let mut ll = T::zero();
        let mut logp = vec![T::zero(); k];
        for (i, &p) in points.iter().enumerate() {
            for (lp, c) in logp.iter_mut().zip(&comps) {
                *lp = c.weight.ln() + c.log_density(p);
            }
            let lse = log_sum_exp(logp.iter().copied());
            ll = ll + lse;
            for j in 0..k {
                resp[i * k + j] = (logp[j] - lse).exp();
            }
        }
        let ll = ll / T::lit(n as f64);
        if !ll.is_finite() {
            return None;
        }
        let converged = trace.last().is_some_and(|&prev: &T| ll - prev < T::lit(TOLERANCE));
        trace.push(ll);
        if converged {
            break;
        }
        let mut floored = false;
        for (j, c) in comps.iter_mut().enumerate() {
            let (nk, mean, mut cov) = moments(points, |i| resp[i * k + j]);
            if !(nk > T::zero()) {
                return None;
            }
            floored |= floor_covariance(&mut cov);
            *c = GmmComponent {
                weight: nk / T::lit(n as f64),
                mean,
                covariance: cov,
            };
        }
        streak = if floored { streak + 1 } else { 0 };
        if streak > COLLAPSE_STREAK {
            return None;
        }
    }
    Some(Gmm {
        components: comps,
        log_likelihood_trace: trace,
        restarts: 0,
    })
}

/// EM fit of a `k`-component full-covariance mixture, started from
/// k-means++ centers. A collapsing run is restarted from the next derived
/// seed, at most [`MAX_RESTARTS`] times.
pub fn gmm_fit<T: Scalar>(points: &[[T; 2]], k: usize, seed: u64) -> Result<Gmm<T>> {
    if k == 0 {
        return Err(AuditError::invalid("mixture needs k >= 1"));
    }
    if points.len() < 10 * k {
        return Err(AuditError::invalid(format!("mixture with k={k} needs at least {} points", 10 * k)));
    }
    if points.iter().any(|p| !(p[0].is_finite() && p[1].is_finite())) {
        return Err(AuditError::numeric("non-finite point passed to mixture fit"));
    }
    for attempt in 0..=MAX_RESTARTS {
        let run_seed = if attempt == 0 { seed } else { derive_seed(seed, attempt as u64) };
        if let Some(mut g) = em(points, k, run_seed) {
            g.restarts = attempt;
            return Ok(g);
        }
    }
    Err(AuditError::numeric(format!("mixture fit collapsed after {MAX_RESTARTS} restarts")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn blobs(seed: u64, centers: &[[f64; 2]], per: usize, sd: f64) -> Vec<[f64; 2]> {
        let mut rng = rng_from_seed(seed);
        centers
            .iter()
            .flat_map(|c| {
                (0..per)
                    .map(|_| {
                        let (a, b): (f64, f64) = (StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
                        [c[0] + sd * a, c[1] + sd * b]
                    })
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    #[test]
    fn single_component_is_gaussian_mle() {
        let mut rng = rng_from_seed(2);
        let pts: Vec<[f64; 2]> = (0..500)
            .map(|_| {
                let (a, b): (f64, f64) = (StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
                [1.0 + 2.0 * a, -1.0 + 0.5 * a + b]
            })
            .collect();
        let g = gmm_fit(&pts, 1, 0).unwrap();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p[0]).sum::<f64>() / n;
        let my = pts.iter().map(|p| p[1]).sum::<f64>() / n;
        let sxx = pts.iter().map(|p| (p[0] - mx).powi(2)).sum::<f64>() / n;
        let sxy = pts.iter().map(|p| (p[0] - mx) * (p[1] - my)).sum::<f64>() / n;
        let syy = pts.iter().map(|p| (p[1] - my).powi(2)).sum::<f64>() / n;
        let c = g.components[0];
        assert_eq!(c.weight, 1.0);
        for (got, want) in [(c.mean[0], mx), (c.mean[1], my), (c.covariance[0][0], sxx), (c.covariance[0][1], sxy), (c.covariance[1][1], syy)] {
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
    }

    #[test]
    fn separated_blobs_recover_centers() {
        let centers = [[-5.0, 0.0], [5.0, 3.0]];
        let g = gmm_fit(&blobs(4, &centers, 400, 0.7), 2, 9).unwrap();
        for c in centers {
            let best = g
                .components
                .iter()
                .map(|k| ((k.mean[0] - c[0]).powi(2) + (k.mean[1] - c[1]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(best < 0.1, "center {c:?} missed by {best}");
        }
    }

    #[test]
    fn trace_is_nondecreasing() {
        for seed in 0..5 {
            let pts = blobs(seed, &[[0.0, 0.0], [2.0, 1.0], [-1.0, 3.0]], 100, 1.0);
            let g = gmm_fit(&pts, 3, seed).unwrap();
            for w in g.log_likelihood_trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-10);
            }
            let total: f64 = g.components.iter().map(|c| c.weight).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn floor_keeps_eigenvector_and_raises_small_eigenvalue() {
        // rank-one matrix along (1, 1)
        let mut cov = [[1.0, 1.0], [1.0, 1.0]];
        assert!(floor_covariance(&mut cov));
        let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
        assert!((det - 2.0 * COVARIANCE_FLOOR).abs() < 1e-12);
        assert!((cov[0][0] + cov[1][1] - 2.0 - COVARIANCE_FLOOR).abs() < 1e-12);
        let mut ok = [[2.0, 0.5], [0.5, 1.0]];
        assert!(!floor_covariance(&mut ok));
    }

    #[test]
    fn duplicated_points_still_fit() {
        let mut pts = vec![[0.0, 0.0]; 30];
        pts.extend(blobs(1, &[[3.0, 3.0]], 30, 1.0));
        let g = gmm_fit(&pts, 2, 0).unwrap();
        assert!(g.components.iter().all(|c| c.weight > 0.0));
        assert!(g.log_likelihood().unwrap().is_finite());
    }

    #[test]
    fn rejects_too_few_points() {
        assert!(gmm_fit(&[[0.0, 0.0]; 15], 2, 0).is_err());
        assert!(gmm_fit(&[[0.0, 0.0]; 15], 0, 0).is_err());
    }

    #[test]
    fn new_validates_components() {
        let c = GmmComponent {
            weight: 1.0,
            mean: [0.0, 0.0],
            covariance: [[1.0, 0.0], [0.0, 1.0]],
        };
        assert!(Gmm::new(vec![c]).is_ok());
        assert!(Gmm::new(vec![GmmComponent { weight: 0.5, ..c }]).is_err());
        assert!(Gmm::new(vec![GmmComponent { covariance: [[1.0, 2.0], [2.0, 1.0]], ..c }]).is_err());
        let g = Gmm::new(vec![c]).unwrap();
        let want = -(2.0 * std::f64::consts::PI).ln();
        assert!((g.log_density([0.0, 0.0]) - want).abs() < 1e-15);
    }
}
