use crate::attacks::marginal::order_statistic_threshold;
use crate::dataspace::LabeledDataset;
use crate::error::{AuditError, Result};
use crate::netcore::MlpModel;
use crate::scalar::Scalar;
use crate::scores::ScoreFn;
use crate::target::ShadowEnsemble;

/// Lower bound on the pooled shadow-score deviation.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Offline shadow-model attack with one global variance.
///
/// The membership statistic is the one-sided z-score
/// `(s_target - mean_out) / global_sigma`, where `mean_out` averages the
/// query's score under the shadow models that never trained on it.
#[derive(Debug, Clone, PartialEq)]
pub struct LiraOfflineAttack<T> {
    pub ensemble: ShadowEnsemble<T>,
    pub score_fn: ScoreFn,
    pub global_sigma: T,
    /// Decision threshold on z, set by [`LiraOfflineAttack::calibrate`].
    pub threshold: Option<T>,
}

impl<T: Scalar> LiraOfflineAttack<T> {
    /// Estimates `global_sigma` as the pooled standard deviation of shadow
    /// scores around their per-row out-model mean, over the public rows the
    /// ensemble was trained from.
    pub fn fit(ensemble: ShadowEnsemble<T>, public: &LabeledDataset<T>, score_fn: ScoreFn) -> Result<Self> {
        if ensemble.public_rows() != public.len() {
            return Err(AuditError::DimensionMismatch {
                expected: ensemble.public_rows(),
                got: public.len(),
            });
        }
        let mut attack = Self {
            ensemble,
            score_fn,
            global_sigma: T::one(),
            threshold: None,
        };
        let mut sum_sq = 0.0f64;
        let mut dof = 0usize;
        for i in 0..public.len() {
            let scores = attack.shadow_scores(public.row(i), public.label(i), Some(i))?;
            if scores.len() < 2 {
                continue;
            }
            let mean = mean_of(&scores);
            sum_sq += scores.iter().map(|&s| (s - mean).as_f64().powi(2)).sum::<f64>();
            dof += scores.len() - 1;
        }
        if dof == 0 {
            return Err(AuditError::invalid(
                "global variance needs some public row with at least two out-models",
            ));
        }
        let sigma = (sum_sq / dof as f64).sqrt().max(SIGMA_FLOOR);
        attack.global_sigma = T::lit(sigma);
        Ok(attack)
    }

    /// Scores of the query under each out-model.
    pub fn shadow_scores(&self, x: &[T], label: usize, public_row: Option<usize>) -> Result<Vec<T>> {
        let out = self.ensemble.out_models(public_row);
        if out.is_empty() {
            return Err(AuditError::invalid(format!(
                "query (public row {public_row:?}) has no out-models"
            )));
        }
        out.into_iter()
            .map(|j| self.score_fn.score(&self.ensemble.models[j].forward(x)?, label))
            .collect()
    }

    /// z-score of the target's score against the out-model distribution;
    /// larger means more member-like.
    pub fn z_score(&self, target_score: T, shadow_scores: &[T]) -> T {
        (target_score - mean_of(shadow_scores)) / self.global_sigma
    }

    pub fn score(&self, target: &MlpModel<T>, x: &[T], label: usize, public_row: Option<usize>) -> Result<T> {
        let s = self.score_fn.score(&target.forward(x)?, label)?;
        Ok(self.z_score(s, &self.shadow_scores(x, label, public_row)?))
    }

    /// Sets the decision threshold to the `(1 - alpha)` order statistic of
    /// holdout z-scores.
    pub fn calibrate(&mut self, holdout_z: &[T], alpha: f64) -> Result<T> {
        let t = order_statistic_threshold(holdout_z, alpha)?;
        self.threshold = Some(t);
        Ok(t)
    }
}

fn mean_of<T: Scalar>(xs: &[T]) -> T {
    xs.iter().copied().sum::<T>() / T::lit(xs.len() as f64)
}

/// z-score of a labeled query; see [`LiraOfflineAttack::score`].
pub fn lira_offline_score<T: Scalar>(
    x: &[T],
    label: usize,
    public_row: Option<usize>,
    target: &MlpModel<T>,
    attack: &LiraOfflineAttack<T>,
) -> Result<T> {
    attack.score(target, x, label, public_row)
}

pub fn lira_calibrate<T: Scalar>(attack: &mut LiraOfflineAttack<T>, holdout_z: &[T], alpha: f64) -> Result<T> {
    attack.calibrate(holdout_z, alpha)
}
