//! Constructed distributions on which every transfer hypothesis can be
//! checked directly.
//!
//! Points are `x = (x1, u, z)` uniform on the unit cube with features
//! `phi(x) = (1, x1, u)`. Scores are `x1 + u / 2 + sigma(u, z) * N(0, 1)` with
//! `sigma = 0.1 + u^2 + 6 z^4`, so no linear predictor is well specified.
//! The query distribution reweights the cube by
//! `(1 - beta)(0.2 + 1.6 u) + beta * 3 z^2`: `beta = 0` is linear in `phi`,
//! `beta = 1` depends only on the coordinate `phi` cannot see.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{AuditError, Result};
use crate::rng::{derive_seed, rng_from_seed, AuditRng};
use crate::scalar::dot;
use crate::transfer::audit::{fpr_transfer_check, pinball_erm_linear, TransferCheck};
use crate::transfer::ratio::linear_ratio_fit;

pub const PHI_DIM: usize = 3;

/// Share of the ratio that is invisible to `phi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatioBlend(pub f64);

impl RatioBlend {
    pub const LINEAR: RatioBlend = RatioBlend(0.0);
    pub const ORTHOGONAL: RatioBlend = RatioBlend(1.0);

    pub fn ratio(self, u: f64, z: f64) -> f64 {
        (1.0 - self.0) * (0.2 + 1.6 * u) + self.0 * 3.0 * z * z
    }

    fn max_ratio(self) -> f64 {
        (1.0 - self.0) * 1.8 + self.0 * 3.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Row-major `n x 3` features.
    pub phi: Vec<f64>,
    pub scores: Vec<f64>,
    /// True density ratio at each point.
    pub ratios: Vec<f64>,
}

fn draw(rng: &mut AuditRng, blend: RatioBlend) -> ([f64; 3], f64, f64) {
    let (x1, u, z): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let sigma = 0.1 + u * u + 6.0 * z.powi(4);
    let noise: f64 = StandardNormal.sample(rng);
    ([1.0, x1, u], x1 + 0.5 * u + sigma * noise, blend.ratio(u, z))
}

/// `n` points from the base distribution (`query = false`) or from its
/// reweighting by `blend`, drawn by rejection.
pub fn sample(blend: RatioBlend, n: usize, query: bool, seed: u64) -> Result<Sample> {
    if !(0.0..=1.0).contains(&blend.0) {
        return Err(AuditError::invalid("ratio blend must lie in [0, 1]"));
    }
    let mut rng = rng_from_seed(seed);
    let mut out = Sample {
        phi: Vec::with_capacity(n * PHI_DIM),
        scores: Vec::with_capacity(n),
        ratios: Vec::with_capacity(n),
    };
    while out.scores.len() < n {
        let (phi, s, r) = draw(&mut rng, blend);
        if query && rng.random::<f64>() * blend.max_ratio() >= r {
            continue;
        }
        out.phi.extend_from_slice(&phi);
        out.scores.push(s);
        out.ratios.push(r);
    }
    Ok(out)
}

/// Fits the linear pinball predictor on `n` base points and measures its
/// exceedance rate on `n` fresh query points.
pub fn theorem_check(blend: RatioBlend, n: usize, alpha: f64, seed: u64) -> Result<TransferCheck> {
    let p = sample(blend, n, false, derive_seed(seed, 1))?;
    let q = sample(blend, n, true, derive_seed(seed, 2))?;
    let beta = pinball_erm_linear(&p.phi, PHI_DIM, &p.scores, alpha)?;
    let thr = |s: &Sample| -> Vec<f64> { s.phi.chunks(PHI_DIM).map(|x| dot(x, &beta)).collect() };
    fpr_transfer_check(&p.scores, &thr(&p), &q.scores, &thr(&q), alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScenarioResult {
    pub blend: f64,
    /// Mean squared error of the best linear-in-`phi` model of the true ratio.
    pub linear_fit_mse: f64,
    pub deviation: f64,
}

/// One smoothness scenario: how well the ratio is linear in `phi`, and how
/// far the coverage moves under the query distribution.
pub fn smoothness_scenario(blend: RatioBlend, n: usize, alpha: f64, seed: u64) -> Result<ScenarioResult> {
    let p = sample(blend, n, false, derive_seed(seed, 1))?;
    let fit = linear_ratio_fit(&p.phi, PHI_DIM, &p.ratios, false)?;
    let check = theorem_check(blend, n, alpha, seed)?;
    Ok(ScenarioResult {
        blend: blend.0,
        linear_fit_mse: fit.mse,
        deviation: check.deviation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratios_average_to_one_under_base() {
        for b in [0.0, 0.5, 1.0] {
            let s = sample(RatioBlend(b), 50_000, false, 3).unwrap();
            let m = s.ratios.iter().sum::<f64>() / s.ratios.len() as f64;
            assert!((m - 1.0).abs() < 0.02, "blend {b}: {m}");
        }
    }

    #[test]
    fn rejection_reweights_u() {
        // under the linear ratio, E_Q[u] = E_P[u (0.2 + 1.6 u)] = 0.1 + 1.6/3
        let q = sample(RatioBlend::LINEAR, 40_000, true, 4).unwrap();
        let mu = q.phi.chunks(3).map(|x| x[2]).sum::<f64>() / 40_000.0;
        assert!((mu - (0.1 + 1.6 / 3.0)).abs() < 0.01, "{mu}");
    }

    #[test]
    fn linear_ratio_is_exactly_representable() {
        let p = sample(RatioBlend::LINEAR, 2000, false, 1).unwrap();
        let fit = linear_ratio_fit(&p.phi, PHI_DIM, &p.ratios, false).unwrap();
        assert!(fit.mse < 1e-10);
    }

    #[test]
    fn sampling_is_seeded() {
        assert_eq!(sample(RatioBlend(0.5), 100, true, 7).unwrap(), sample(RatioBlend(0.5), 100, true, 7).unwrap());
        assert!(sample(RatioBlend(1.5), 10, true, 7).is_err());
    }
}
