use serde::Serialize;

use crate::error::{AuditError, Result};
use crate::linalg::{cholesky, cholesky_solve};
use crate::scalar::{dot, Scalar};
use crate::transfer::gmm::Gmm;

pub const RATIO_FLOOR: f64 = 1e-12;
pub const RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityRatios<T> {
    pub values: Vec<T>,
    /// Points where the denominator density was raised to the floor.
    pub floored: Vec<bool>,
}

impl<T> DensityRatios<T> {
    pub fn floored_count(&self) -> usize {
        self.floored.iter().filter(|&&f| f).count()
    }
}

/// `q(z) / max(p(z), 1e-12)` at every point.
pub fn density_ratio<T: Scalar>(gmm_q: &Gmm<T>, gmm_p: &Gmm<T>, points: &[[T; 2]]) -> DensityRatios<T> {
    let floor = T::lit(RATIO_FLOOR);
    let (values, floored) = points
        .iter()
        .map(|&z| {
            let p = gmm_p.density(z);
            let q = gmm_q.density(z);
            if p < floor {
                (q / floor, true)
            } else {
                (q / p, false)
            }
        })
        .unzip();
    DensityRatios { values, floored }
}

/// Least-squares linear model of the density ratio on embeddings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioFit<T> {
    pub v: Vec<T>,
    /// Present when the fit was run with a free intercept.
    pub intercept: Option<T>,
    pub mse: T,
}

impl<T: Scalar> RatioFit<T> {
    pub fn predict(&self, phi: &[T]) -> T {
        dot(&self.v, phi) + self.intercept.unwrap_or_else(T::zero)
    }
}

/// Ridge-regularized (`1e-8` times the identity on the mean Gram matrix)
/// least squares of `ratios` on the rows of `phi` (`n x dim`), solved by
/// Cholesky. The intercept, when requested, is fitted as an extra column.
pub fn linear_ratio_fit<T: Scalar>(phi: &[T], dim: usize, ratios: &[T], with_intercept: bool) -> Result<RatioFit<T>> {
    if dim == 0 || phi.len() != ratios.len() * dim {
        return Err(AuditError::invalid("embedding rows and ratios disagree in length"));
    }
    let n = ratios.len();
    let p = dim + usize::from(with_intercept);
    if n < p {
        return Err(AuditError::invalid(format!("ratio fit needs at least {p} rows, got {n}")));
    }
    let mut gram = vec![T::zero(); p * p];
    let mut rhs = vec![T::zero(); p];
    let mut row = vec![T::one(); p];
    for (x, &r) in phi.chunks(dim).zip(ratios) {
        row[..dim].copy_from_slice(x);
        for i in 0..p {
            rhs[i] = rhs[i] + row[i] * r;
            for j in i..p {
                gram[i * p + j] = gram[i * p + j] + row[i] * row[j];
            }
        }
    }
    let nf = T::lit(n as f64);
    for i in 0..p {
        rhs[i] = rhs[i] / nf;
        for j in i..p {
            let v = gram[i * p + j] / nf;
            gram[i * p + j] = v;
            gram[j * p + i] = v;
        }
        gram[i * p + i] = gram[i * p + i] + T::lit(RIDGE);
    }
    let l = cholesky(&gram, p)?;
    let mut v = cholesky_solve(&l, p, &rhs);
    let intercept = with_intercept.then(|| v[dim]);
    v.truncate(dim);
    let mut fit = RatioFit {
        v,
        intercept,
        mse: T::zero(),
    };
    fit.mse = phi
        .chunks(dim)
        .zip(ratios)
        .map(|(x, &r)| {
            let e = fit.predict(x) - r;
            e * e
        })
        .sum::<T>()
        / nf;
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::transfer::gmm::GmmComponent;
    use rand::Rng;

    fn gaussian(mx: f64, var: f64) -> Gmm<f64> {
        Gmm::new(vec![GmmComponent {
            weight: 1.0,
            mean: [mx, 0.0],
            covariance: [[var, 0.0], [0.0, var]],
        }])
        .unwrap()
    }

    #[test]
    fn equal_mixtures_give_unit_ratio() {
        let g = gaussian(0.5, 2.0);
        let r = density_ratio(&g, &g, &[[0.0, 0.0], [3.0, -1.0], [-2.0, 4.0]]);
        assert!(r.values.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        assert_eq!(r.floored_count(), 0);
    }

    #[test]
    fn shifted_gaussian_matches_closed_form() {
        let mu = 1.3;
        let (q, p) = (gaussian(mu, 1.0), gaussian(0.0, 1.0));
        for x in [0.0, 0.7, -2.0] {
            let r = density_ratio(&q, &p, &[[x, 0.4]]).values[0];
            let want = (mu * x - mu * mu / 2.0).exp();
            assert!((r / want - 1.0).abs() < 1e-12, "{r} vs {want}");
        }
    }

    #[test]
    fn far_tail_hits_floor() {
        let (q, p) = (gaussian(40.0, 1.0), gaussian(0.0, 1.0));
        let r = density_ratio(&q, &p, &[[40.0, 0.0], [0.0, 0.0]]);
        assert_eq!(r.floored, vec![true, false]);
        assert!(r.values[0].is_finite());
    }

    #[test]
    fn realizable_ratios_fit_exactly() {
        let mut rng = rng_from_seed(1);
        let phi: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r: Vec<f64> = phi.chunks(3).map(|x| 0.5 + 2.0 * x[0] - x[2]).collect();
        let fit = linear_ratio_fit(&phi, 3, &r, true).unwrap();
        assert!(fit.mse <= 1e-10);
        assert!((fit.intercept.unwrap() - 0.5).abs() < 1e-6);
    }

    #[test]
    fn orthogonal_ratios_give_zero_weights() {
        // phi columns are +-1 patterns orthogonal to the ratio pattern
        let phi: [f64; 8] = [1.0, 1.0, 1.0, -1.0, -1.0, 1.0, -1.0, -1.0];
        let r: [f64; 4] = [1.0, -1.0, -1.0, 1.0];
        let fit = linear_ratio_fit(&phi, 2, &r, false).unwrap();
        assert!(fit.v.iter().all(|v| v.abs() < 1e-12));
        assert!((fit.mse - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matches_gradient_descent() {
        let mut rng = rng_from_seed(8);
        let (n, d) = (200, 4);
        let phi: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
        let fit = linear_ratio_fit(&phi, d, &r, false).unwrap();
        let mut w = vec![0.0; d];
        for _ in 0..20_000 {
            let mut g = vec![0.0; d];
            for (x, &y) in phi.chunks(d).zip(&r) {
                let e = dot(&w, x) - y;
                for j in 0..d {
                    g[j] += 2.0 * e * x[j] / n as f64;
                }
            }
            for j in 0..d {
                w[j] -= 0.5 * g[j];
            }
        }
        for (a, b) in fit.v.iter().zip(&w) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }
}
