use serde::Serialize;

use crate::attacks::{qr_train, QuantileArch, QuantileAttack};
use crate::dataspace::{drop_classes, ClassDropSpec, LabeledDataset};
use crate::error::{AuditError, Result};
use crate::evaluation::experiment::{prepare_seed, public_scores};
use crate::evaluation::{AttackSpec, ExperimentConfig};
use crate::rng::{derive_seed, stream};
use crate::transfer::audit::{default_directions, fpr_transfer_check, multiaccuracy_audit};
use crate::transfer::embed::{extract_embeddings, pca2, EmbeddingSource};
use crate::transfer::gmm::{gmm_fit, GmmComponent};
use crate::transfer::ratio::{density_ratio, linear_ratio_fit};

pub const DEFAULT_GMM_COMPONENTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatioMse {
    pub with_intercept: f64,
    pub without_intercept: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GmmParams {
    #[serde(rename = "P")]
    pub p: Vec<GmmComponent<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<GmmComponent<f64>>,
    pub log_likelihood_p: f64,
    pub log_likelihood_q: f64,
}

/// Embedding-space diagnostics for one seed. `P` is the filtered public set
/// the quantile predictor was fitted on, `Q` the holdout over every class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferReport {
    pub seed: u64,
    pub dropped_classes: Vec<usize>,
    pub alpha: f64,
    pub n_p: usize,
    pub n_q: usize,
    pub pca_eigenvalues: [f64; 2],
    pub gmm_params: GmmParams,
    pub linear_fit_mse: RatioMse,
    /// Ratios whose denominator density hit the floor.
    pub floored_ratios: usize,
    pub multiaccuracy_max_violation: f64,
    #[serde(rename = "coverage_P")]
    pub coverage_p: f64,
    #[serde(rename = "coverage_Q")]
    pub coverage_q: f64,
    /// Exceedance rate on the dropped classes' holdout rows, if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage_unseen: Option<f64>,
    pub deviation: f64,
    pub flagged: bool,
}

fn thresholds(attack: &QuantileAttack<f64>, data: &LabeledDataset<f64>) -> Result<Vec<f64>> {
    (0..data.len()).map(|i| attack.threshold(data.row(i))).collect()
}

/// Fits the configured quantile attack at `alpha` on the public split without
/// the dropped classes and compares its embeddings of that split with the
/// embeddings of the full holdout.
pub fn transfer_diagnostics(
    cfg: &ExperimentConfig,
    dropped: &ClassDropSpec,
    alpha: f64,
    gmm_components: usize,
    seed: u64,
) -> Result<TransferReport> {
    cfg.validate()?;
    let (score_fn, mode, arch, opt) = match cfg.attacks.iter().find(|a| a.name() == "quantile") {
        Some(AttackSpec::Quantile {
            score_fn,
            mode,
            arch,
            opt,
        }) => (*score_fn, *mode, arch.clone(), opt.clone()),
        _ => match AttackSpec::default_quantile() {
            AttackSpec::Quantile {
                score_fn,
                mode,
                arch,
                opt,
            } => (score_fn, mode, arch, opt),
            _ => unreachable!("default_quantile builds a quantile spec"),
        },
    };
    if !matches!(&arch, QuantileArch::Network(a) if !a.hidden.is_empty()) {
        return Err(AuditError::invalid("transfer diagnostics need a quantile network with a hidden layer"));
    }
    let ctx = prepare_seed(cfg, seed)?;
    let p_set = drop_classes(&ctx.public, dropped)?;
    let q_set = &ctx.holdout;
    let attack = qr_train(
        &p_set,
        &ctx.target,
        score_fn,
        mode,
        alpha,
        &arch,
        &opt.with_seed(derive_seed(seed, stream::QUANTILE_OPT)),
        derive_seed(seed, stream::QUANTILE_INIT),
    )?;
    let (s_p, s_q) = (public_scores(&ctx.target, &p_set, score_fn)?, public_scores(&ctx.target, q_set, score_fn)?);
    let (t_p, t_q) = (thresholds(&attack, &p_set)?, thresholds(&attack, q_set)?);

    let emb_p = extract_embeddings(&attack.predictor, p_set.features(), EmbeddingSource::Seen)?;
    let emb_q = extract_embeddings(&attack.predictor, q_set.features(), EmbeddingSource::Full)?;
    let dim = emb_p.dim;
    let mut joint = emb_p.rows.clone();
    joint.extend_from_slice(&emb_q.rows);
    let pca = pca2(&joint, dim)?;
    let (proj_p, proj_q) = pca.projected.split_at(emb_p.len());

    let gmm_p = gmm_fit(proj_p, gmm_components, derive_seed(seed, stream::GMM_P))?;
    let gmm_q = gmm_fit(proj_q, gmm_components, derive_seed(seed, stream::GMM_Q))?;
    let ratios = density_ratio(&gmm_q, &gmm_p, proj_p);
    let fit = linear_ratio_fit(&emb_p.rows, dim, &ratios.values, true)?;
    let fit_plain = linear_ratio_fit(&emb_p.rows, dim, &ratios.values, false)?;

    let directions = default_directions(dim, derive_seed(seed, stream::DIRECTIONS), Some(&fit_plain.v));
    let violation = multiaccuracy_audit(&emb_p.rows, dim, &s_p, &t_p, &directions, alpha)?;
    let check = fpr_transfer_check(&s_p, &t_p, &s_q, &t_q, alpha)?;

    let unseen: Vec<usize> = (0..q_set.len()).filter(|&i| dropped.contains(q_set.label(i))).collect();
    let coverage_unseen = (!unseen.is_empty()).then(|| {
        unseen.iter().filter(|&&i| s_q[i] > t_q[i]).count() as f64 / unseen.len() as f64
    });

    Ok(TransferReport {
        seed,
        dropped_classes: dropped.classes().collect(),
        alpha,
        n_p: p_set.len(),
        n_q: q_set.len(),
        pca_eigenvalues: pca.eigenvalues,
        gmm_params: GmmParams {
            log_likelihood_p: gmm_p.log_likelihood().unwrap_or(f64::NAN),
            log_likelihood_q: gmm_q.log_likelihood().unwrap_or(f64::NAN),
            p: gmm_p.components,
            q: gmm_q.components,
        },
        linear_fit_mse: RatioMse {
            with_intercept: fit.mse,
            without_intercept: fit_plain.mse,
        },
        floored_ratios: ratios.floored_count(),
        multiaccuracy_max_violation: violation,
        coverage_p: check.coverage_p,
        coverage_q: check.coverage_q,
        coverage_unseen,
        deviation: check.deviation,
        flagged: check.flagged,
    })
}
