use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::attacks::{marginal_fit, qr_train, FittedAttack, LiraOfflineAttack, QuantileArch, QuantileAttack, QuantileMode};
use crate::dataspace::{drop_classes, generate_synthetic, split, subsample_per_class, ClassDropSpec, LabeledDataset, SynthConfig};
use crate::error::{AuditError, Result};
use crate::evaluation::report::{median, CellDiagnostics, CellReport, DecisionPoint, EvalReport, GroupMetrics};
use crate::evaluation::roc::{roc_csv, roc_curve, tpr_at_fpr, RocCurve};
use crate::netcore::{Architecture, MlpModel, OptConfig};
use crate::rng::{derive_seed, rng_from_seed, stream};
use crate::scores::{ScoreFn, ScoreKind};
use crate::target::{accuracy, mean_class_probability, train_shadow_ensemble, train_target};

/// Where each seed's dataset comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Regenerated per seed with `SynthConfig::seed` set to the experiment seed.
    Synthetic(SynthConfig),
    /// Fixed dataset; seeds only change splits and training.
    Loaded(LabeledDataset<f64>),
}

impl DataSource {
    pub fn class_count(&self) -> usize {
        match self {
            DataSource::Synthetic(s) => s.class_count,
            DataSource::Loaded(d) => d.class_count(),
        }
    }

    /// The dataset used for `seed`.
    pub fn materialize(&self, seed: u64) -> Result<LabeledDataset<f64>> {
        match self {
            DataSource::Synthetic(s) => generate_synthetic(&SynthConfig { seed, ..s.clone() }),
            DataSource::Loaded(d) => Ok(d.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AttackSpec {
    Marginal {
        score_fn: ScoreFn,
    },
    Lira {
        score_fn: ScoreFn,
        shadow_count: usize,
        subset_fraction: f64,
    },
    Quantile {
        score_fn: ScoreFn,
        mode: QuantileMode,
        arch: QuantileArch,
        opt: OptConfig,
    },
}

impl AttackSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AttackSpec::Marginal { .. } => "marginal",
            AttackSpec::Lira { .. } => "lira",
            AttackSpec::Quantile { .. } => "quantile",
        }
    }

    pub fn default_marginal() -> Self {
        AttackSpec::Marginal {
            score_fn: ScoreFn::new(ScoreKind::TrueLabelMargin),
        }
    }

    pub fn default_lira() -> Self {
        AttackSpec::Lira {
            score_fn: ScoreFn::new(ScoreKind::TrueLabelConfidence),
            shadow_count: 16,
            subset_fraction: 0.5,
        }
    }

    pub fn default_quantile() -> Self {
        AttackSpec::Quantile {
            score_fn: ScoreFn::new(ScoreKind::TrueLabelMargin),
            mode: QuantileMode::Gaussian,
            arch: QuantileArch::Network(Architecture::default()),
            opt: OptConfig::default(),
        }
    }
}

/// Everything an experiment grid shares across its cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    /// Fractions for (private, public, holdout).
    pub split: [f64; 3],
    /// Share of the (filtered) public set held back to calibrate LiRA.
    pub calib_fraction: f64,
    /// Target share of members among each class's queries.
    pub member_fraction: f64,
    pub target_arch: Architecture,
    pub target_opt: OptConfig,
    pub attacks: Vec<AttackSpec>,
    pub fpr_targets: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Synthetic(SynthConfig::default()),
            split: [0.5, 0.25, 0.25],
            calib_fraction: 0.2,
            member_fraction: 0.5,
            target_arch: Architecture::default(),
            target_opt: OptConfig {
                epochs: 100,
                ..OptConfig::default()
            },
            attacks: vec![
                AttackSpec::default_marginal(),
                AttackSpec::default_lira(),
                AttackSpec::default_quantile(),
            ],
            fpr_targets: vec![0.05, 0.01],
            seeds: (0..5).collect(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(AuditError::invalid("experiment needs at least one seed"));
        }
        if self.attacks.is_empty() {
            return Err(AuditError::invalid("experiment needs at least one attack"));
        }
        let mut names: Vec<&str> = self.attacks.iter().map(AttackSpec::name).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(AuditError::invalid("each attack kind may appear once"));
        }
        if self.fpr_targets.is_empty() || self.fpr_targets.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(AuditError::invalid("fpr targets must be a nonempty list in (0, 1)"));
        }
        if !(self.calib_fraction > 0.0 && self.calib_fraction < 1.0) {
            return Err(AuditError::invalid("calib_fraction must lie in (0, 1)"));
        }
        if !(self.member_fraction > 0.0 && self.member_fraction < 1.0) {
            return Err(AuditError::invalid("member_fraction must lie in (0, 1)"));
        }
        if let DataSource::Synthetic(s) = &self.data {
            s.validate()?;
        }
        self.target_opt.validate()
    }
}

/// One cell of an experiment grid beyond its seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub dropped: ClassDropSpec,
    /// Per-class public sample cap; `None` keeps every row.
    pub per_class: Option<usize>,
    pub label: String,
}

fn drop_label(d: &ClassDropSpec) -> String {
    let classes: Vec<String> = d.classes().map(|c| c.to_string()).collect();
    if classes.is_empty() {
        "nodrop".into()
    } else {
        format!("drop{}", classes.join("+"))
    }
}

/// Report plus the ROC CSV files of every cell.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub report: EvalReport,
    /// `(file name, contents)`.
    pub roc_files: Vec<(String, String)>,
}

/// Data and target model shared by every cell of one seed.
pub(crate) struct SeedContext {
    pub(crate) seed: u64,
    pub(crate) private: LabeledDataset<f64>,
    pub(crate) public: LabeledDataset<f64>,
    pub(crate) target: MlpModel<f64>,
    /// Query rows per class: (private member indices, holdout nonmember indices).
    pub(crate) members: Vec<Vec<usize>>,
    pub(crate) holdout: LabeledDataset<f64>,
    pub(crate) nonmembers: Vec<Vec<usize>>,
    pub(crate) train_accuracy: f64,
    pub(crate) holdout_accuracy: f64,
}

pub(crate) fn prepare_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedContext> {
    let data = cfg.data.materialize(seed)?;
    let mut parts = split(&data, &cfg.split, derive_seed(seed, stream::SPLIT))?.into_iter();
    let (private, public, holdout) = match (parts.next(), parts.next(), parts.next()) {
        (Some(a), Some(b), Some(c)) => (a.with_tag("private"), b.with_tag("public"), c.with_tag("holdout")),
        _ => unreachable!("split returns one part per fraction"),
    };
    let opt = cfg.target_opt.with_seed(derive_seed(seed, stream::TARGET_OPT));
    let target = train_target(&private, &cfg.target_arch, &opt)?;

    let mut rng = rng_from_seed(derive_seed(seed, stream::QUERY));
    let ratio = cfg.member_fraction / (1.0 - cfg.member_fraction);
    let nonmembers = holdout.indices_by_class();
    let members = private
        .indices_by_class()
        .into_iter()
        .zip(&nonmembers)
        .map(|(mut pool, nm)| {
            let want = ((nm.len() as f64 * ratio).round() as usize).clamp(1, pool.len().max(1));
            pool.shuffle(&mut rng);
            pool.truncate(want);
            pool.sort_unstable();
            pool
        })
        .collect();
    Ok(SeedContext {
        seed,
        train_accuracy: accuracy(&target, &private)?,
        holdout_accuracy: accuracy(&target, &holdout)?,
        private,
        public,
        target,
        members,
        holdout,
        nonmembers,
    })
}

/// Splits and trained target of one seed, as the pipeline's first stages
/// produce them.
#[derive(Debug, Clone)]
pub struct SeedStage {
    pub private: LabeledDataset<f64>,
    pub public: LabeledDataset<f64>,
    pub holdout: LabeledDataset<f64>,
    pub target: MlpModel<f64>,
    pub train_accuracy: f64,
    pub holdout_accuracy: f64,
}

pub fn seed_stage(cfg: &ExperimentConfig, seed: u64) -> Result<SeedStage> {
    cfg.validate()?;
    let ctx = prepare_seed(cfg, seed)?;
    Ok(SeedStage {
        private: ctx.private,
        public: ctx.public,
        holdout: ctx.holdout,
        target: ctx.target,
        train_accuracy: ctx.train_accuracy,
        holdout_accuracy: ctx.holdout_accuracy,
    })
}

/// Every configured attack fitted at `alpha` on the public split of `seed`
/// without the `dropped` classes, with the same random streams the grid uses.
pub fn fit_attacks(
    cfg: &ExperimentConfig,
    seed: u64,
    dropped: &ClassDropSpec,
    alpha: f64,
) -> Result<(MlpModel<f64>, Vec<FittedAttack<f64>>)> {
    cfg.validate()?;
    let ctx = prepare_seed(cfg, seed)?;
    let public = drop_classes(&ctx.public, dropped)?;
    let target = &ctx.target;
    let mut out = Vec::new();
    for spec in &cfg.attacks {
        out.push(match spec {
            AttackSpec::Marginal { score_fn } => FittedAttack::Marginal {
                attack: marginal_fit(&public_scores(target, &public, *score_fn)?, alpha)?,
                score_fn: *score_fn,
            },
            AttackSpec::Lira {
                score_fn,
                shadow_count,
                subset_fraction,
            } => {
                let (fit_rows, calib_rows) = calib_split(&public, cfg.calib_fraction, derive_seed(seed, stream::CALIB_SPLIT))?;
                let shadows = train_shadow_ensemble(
                    &fit_rows,
                    *shadow_count,
                    *subset_fraction,
                    &cfg.target_arch,
                    &cfg.target_opt,
                    derive_seed(seed, stream::SHADOW),
                )?;
                let mut attack = LiraOfflineAttack::fit(shadows, &fit_rows, *score_fn)?;
                let calib_z = (0..calib_rows.len())
                    .map(|i| attack.score(target, calib_rows.row(i), calib_rows.label(i), None))
                    .collect::<Result<Vec<f64>>>()?;
                attack.calibrate(&calib_z, alpha)?;
                FittedAttack::Lira(attack)
            }
            AttackSpec::Quantile {
                score_fn,
                mode,
                arch,
                opt,
            } => FittedAttack::Quantile(qr_train(
                &public,
                target,
                *score_fn,
                *mode,
                alpha,
                arch,
                &opt.with_seed(derive_seed(seed, stream::QUANTILE_OPT)),
                derive_seed(seed, stream::QUANTILE_INIT),
            )?),
        });
    }
    Ok((ctx.target, out))
}

/// Continuous attack scores of every query, one vector per FPR target
/// when the statistic depends on the target level.
enum AttackScores {
    Shared(Vec<f64>, Vec<f64>),
    PerTarget(Vec<(Vec<f64>, Vec<f64>)>),
}

impl AttackScores {
    fn at(&self, t: usize) -> (&[f64], &[f64]) {
        match self {
            AttackScores::Shared(m, n) => (m, n),
            AttackScores::PerTarget(v) => (&v[t].0, &v[t].1),
        }
    }
}

struct QuerySet<'a> {
    member_rows: Vec<(&'a [f64], usize)>,
    nonmember_rows: Vec<(&'a [f64], usize)>,
}

impl<'a> QuerySet<'a> {
    fn new(ctx: &'a SeedContext) -> Self {
        let member_rows = ctx.members.iter().flatten().map(|&i| (ctx.private.row(i), ctx.private.label(i))).collect();
        let nonmember_rows = ctx
            .nonmembers
            .iter()
            .flatten()
            .map(|&i| (ctx.holdout.row(i), ctx.holdout.label(i)))
            .collect();
        Self {
            member_rows,
            nonmember_rows,
        }
    }

    fn map(&self, mut f: impl FnMut(&[f64], usize) -> Result<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        let m = self.member_rows.iter().map(|&(x, y)| f(x, y)).collect::<Result<Vec<_>>>()?;
        let n = self.nonmember_rows.iter().map(|&(x, y)| f(x, y)).collect::<Result<Vec<_>>>()?;
        Ok((m, n))
    }
}

fn check_finite(name: &str, scores: &[f64]) -> Result<()> {
    if scores.iter().all(|s| s.is_finite()) {
        Ok(())
    } else {
        Err(AuditError::numeric(format!("{name} produced non-finite scores")))
    }
}

/// Realized FPR/TPR of hard decisions on all queries.
fn decision_point(member: &[bool], nonmember: &[bool]) -> DecisionPoint {
    let rate = |v: &[bool]| v.iter().filter(|&&b| b).count() as f64 / v.len().max(1) as f64;
    DecisionPoint {
        fpr: rate(nonmember),
        tpr: rate(member),
    }
}

struct CellOutput {
    report: CellReport,
    rocs: Vec<(String, RocCurve)>,
}

fn run_cell(cfg: &ExperimentConfig, ctx: &SeedContext, variant: &Variant) -> Result<CellOutput> {
    let class_count = ctx.private.class_count();
    for c in variant.dropped.classes() {
        if ctx.members[c].is_empty() || ctx.nonmembers[c].is_empty() {
            return Err(AuditError::invalid(format!(
                "dropped class {c} has no member or nonmember queries in seed {}",
                ctx.seed
            )));
        }
    }
    let mut public = drop_classes(&ctx.public, &variant.dropped)?;
    if let Some(k) = variant.per_class {
        public = subsample_per_class(&public, k, derive_seed(ctx.seed, stream::SUBSAMPLE))?;
    }
    let queries = QuerySet::new(ctx);
    let target = &ctx.target;
    // streams depend on the seed only, so variants share random numbers
    let cell_seed = ctx.seed;

    let mut scores: BTreeMap<&'static str, AttackScores> = BTreeMap::new();
    let mut decisions: BTreeMap<String, BTreeMap<String, DecisionPoint>> = BTreeMap::new();
    let mut shadow_probs = None;

    for spec in &cfg.attacks {
        let mut per_alpha = BTreeMap::new();
        match spec {
            AttackSpec::Marginal { score_fn } => {
                let fit = public_scores(target, &public, *score_fn)?;
                let (m, n) = queries.map(|x, y| score_fn.score(&target.forward(x)?, y))?;
                for &alpha in &cfg.fpr_targets {
                    let a = marginal_fit(&fit, alpha)?;
                    let dm: Vec<bool> = m.iter().map(|&s| a.predict(s).0).collect();
                    let dn: Vec<bool> = n.iter().map(|&s| a.predict(s).0).collect();
                    per_alpha.insert(alpha.to_string(), decision_point(&dm, &dn));
                }
                scores.insert("marginal", AttackScores::Shared(m, n));
            }
            AttackSpec::Lira {
                score_fn,
                shadow_count,
                subset_fraction,
            } => {
                let (fit_rows, calib_rows) = calib_split(&public, cfg.calib_fraction, derive_seed(cell_seed, stream::CALIB_SPLIT))?;
                let shadows = train_shadow_ensemble(
                    &fit_rows,
                    *shadow_count,
                    *subset_fraction,
                    &cfg.target_arch,
                    &cfg.target_opt,
                    derive_seed(cell_seed, stream::SHADOW),
                )?;
                if !variant.dropped.is_empty() {
                    let probs = shadows
                        .models
                        .iter()
                        .map(|model| {
                            variant.dropped.classes().try_fold(0.0f64, |acc, c| {
                                let rows: Vec<usize> = ctx.nonmembers[c].clone();
                                let sub = ctx.holdout.select(&rows, "dropped")?;
                                Ok::<f64, AuditError>(acc.max(mean_class_probability(model, &sub, c)?))
                            })
                        })
                        .collect::<Result<Vec<f64>>>()?;
                    shadow_probs = Some(probs);
                }
                let mut attack = LiraOfflineAttack::fit(shadows, &fit_rows, *score_fn)?;
                let calib_z = (0..calib_rows.len())
                    .map(|i| attack.score(target, calib_rows.row(i), calib_rows.label(i), None))
                    .collect::<Result<Vec<f64>>>()?;
                let (m, n) = queries.map(|x, y| attack.score(target, x, y, None))?;
                for &alpha in &cfg.fpr_targets {
                    let t = attack.calibrate(&calib_z, alpha)?;
                    let dm: Vec<bool> = m.iter().map(|&z| z > t).collect();
                    let dn: Vec<bool> = n.iter().map(|&z| z > t).collect();
                    per_alpha.insert(alpha.to_string(), decision_point(&dm, &dn));
                }
                scores.insert("lira", AttackScores::Shared(m, n));
            }
            AttackSpec::Quantile {
                score_fn,
                mode,
                arch,
                opt,
            } => {
                let qopt = opt.with_seed(derive_seed(cell_seed, stream::QUANTILE_OPT));
                let init = derive_seed(cell_seed, stream::QUANTILE_INIT);
                let mut sets = Vec::new();
                let mut fitted: Option<QuantileAttack<f64>> = None;
                for &alpha in &cfg.fpr_targets {
                    let attack = match (mode, &fitted) {
                        (QuantileMode::Gaussian, Some(base)) => base.with_alpha(alpha)?,
                        _ => qr_train(&public, target, *score_fn, *mode, alpha, arch, &qopt, init)?,
                    };
                    let (m, n) = queries.map(|x, y| Ok(attack.predict(x, score_fn.score(&target.forward(x)?, y)?)?.1))?;
                    let dm: Vec<bool> = m.iter().map(|&v| v > 0.0).collect();
                    let dn: Vec<bool> = n.iter().map(|&v| v > 0.0).collect();
                    per_alpha.insert(alpha.to_string(), decision_point(&dm, &dn));
                    sets.push((m, n));
                    fitted = Some(attack);
                }
                scores.insert("quantile", AttackScores::PerTarget(sets));
            }
        }
        decisions.insert(spec.name().to_string(), per_alpha);
    }

    // query groups, as index lists into the flattened member/nonmember vectors
    let mut groups: Vec<(String, Vec<usize>, Vec<usize>)> = Vec::new();
    let (mut m_off, mut n_off) = (0, 0);
    let mut seen = (Vec::new(), Vec::new());
    let mut unseen = (Vec::new(), Vec::new());
    for c in 0..class_count {
        let mi: Vec<usize> = (m_off..m_off + ctx.members[c].len()).collect();
        let ni: Vec<usize> = (n_off..n_off + ctx.nonmembers[c].len()).collect();
        m_off += mi.len();
        n_off += ni.len();
        let bucket = if variant.dropped.contains(c) { &mut unseen } else { &mut seen };
        bucket.0.extend(&mi);
        bucket.1.extend(&ni);
        groups.push((format!("class_{c}"), mi, ni));
    }
    groups.push(("seen".into(), seen.0, seen.1));
    if !variant.dropped.is_empty() {
        groups.push(("unseen".into(), unseen.0, unseen.1));
    }
    groups.push(("all".into(), (0..m_off).collect(), (0..n_off).collect()));

    let mut attacks = BTreeMap::new();
    let mut rocs = Vec::new();
    for (name, sc) in &scores {
        let mut by_group = BTreeMap::new();
        for (group, mi, ni) in &groups {
            if mi.is_empty() || ni.is_empty() {
                continue;
            }
            let mut tpr = BTreeMap::new();
            for (t, &fpr) in cfg.fpr_targets.iter().enumerate() {
                let (m, n) = sc.at(t);
                let ms: Vec<f64> = mi.iter().map(|&i| m[i]).collect();
                let ns: Vec<f64> = ni.iter().map(|&i| n[i]).collect();
                check_finite(name, &ms)?;
                check_finite(name, &ns)?;
                let curve = roc_curve(&ms, &ns)?;
                tpr.insert(fpr.to_string(), tpr_at_fpr(&curve, fpr));
                if t == 0 && matches!(group.as_str(), "seen" | "unseen" | "all") {
                    rocs.push((format!("{name}_{group}"), curve));
                }
            }
            let underpowered = cfg.fpr_targets.iter().any(|&f| (ni.len() as f64) * f < 1.0);
            by_group.insert(
                group.clone(),
                GroupMetrics {
                    tpr,
                    n_member: mi.len(),
                    n_nonmember: ni.len(),
                    underpowered,
                },
            );
        }
        attacks.insert(name.to_string(), by_group);
    }

    let report = CellReport {
        id: format!("seed{}_{}", ctx.seed, variant.label.clone()),
        seed: ctx.seed,
        variant: variant.label.clone(),
        dropped_classes: variant.dropped.classes().collect(),
        per_class: variant.per_class,
        public_rows: public.len(),
        attacks,
        decisions,
        diagnostics: CellDiagnostics {
            target_train_accuracy: ctx.train_accuracy,
            target_holdout_accuracy: ctx.holdout_accuracy,
            shadow_dropped_label_probability: shadow_probs,
        },
    };
    Ok(CellOutput { report, rocs })
}

pub(crate) fn public_scores(target: &MlpModel<f64>, public: &LabeledDataset<f64>, score_fn: ScoreFn) -> Result<Vec<f64>> {
    (0..public.len())
        .map(|i| score_fn.score(&target.forward(public.row(i))?, public.label(i)))
        .collect()
}

/// Random (unstratified) split of the public rows into a shadow-training part
/// and a calibration part of `max(1, round(fraction * n))` rows.
fn calib_split(
    public: &LabeledDataset<f64>,
    fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset<f64>, LabeledDataset<f64>)> {
    let n = public.len();
    if n < 3 {
        return Err(AuditError::invalid(format!(
            "public set of {n} rows is too small for shadow training and calibration"
        )));
    }
    let calib = ((fraction * n as f64).round() as usize).clamp(1, n - 2);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from_seed(seed));
    let (c, f) = idx.split_at(calib);
    let (mut c, mut f) = (c.to_vec(), f.to_vec());
    c.sort_unstable();
    f.sort_unstable();
    Ok((public.select(&f, "public-fit")?, public.select(&c, "public-calib")?))
}

fn run_grid(cfg: &ExperimentConfig, kind: &str, variants: &[Variant]) -> Result<ExperimentOutput> {
    cfg.validate()?;
    if variants.is_empty() {
        return Err(AuditError::invalid("experiment grid is empty"));
    }
    let contexts = cfg
        .seeds
        .par_iter()
        .map(|&s| prepare_seed(cfg, s))
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<(usize, usize)> = (0..contexts.len())
        .flat_map(|s| (0..variants.len()).map(move |v| (s, v)))
        .collect();
    let outputs = cells
        .par_iter()
        .map(|&(s, v)| run_cell(cfg, &contexts[s], &variants[v]))
        .collect::<Result<Vec<_>>>()?;

    let mut roc_files = Vec::new();
    for out in &outputs {
        for (name, curve) in &out.rocs {
            roc_files.push((format!("roc_{name}_{}.csv", out.report.id), roc_csv(curve)));
        }
    }
    let cells: Vec<CellReport> = outputs.into_iter().map(|o| o.report).collect();
    let summary = summarize(&cells, &cfg.fpr_targets);
    Ok(ExperimentOutput {
        report: EvalReport {
            experiment: kind.to_string(),
            config: BTreeMap::new(),
            seeds: cfg.seeds.clone(),
            fpr_targets: cfg.fpr_targets.clone(),
            cells,
            summary,
        },
        roc_files,
    })
}

/// Median over seeds: variant → attack → group → fpr target → TPR.
fn summarize(cells: &[CellReport], fprs: &[f64]) -> BTreeMap<String, BTreeMap<String, BTreeMap<String, BTreeMap<String, f64>>>> {
    let mut out: BTreeMap<String, BTreeMap<String, BTreeMap<String, BTreeMap<String, f64>>>> = BTreeMap::new();
    let mut variants: Vec<&str> = cells.iter().map(|c| c.variant.as_str()).collect();
    variants.dedup();
    variants.sort_unstable();
    variants.dedup();
    for v in variants {
        let group_cells: Vec<&CellReport> = cells.iter().filter(|c| c.variant == v).collect();
        let entry = out.entry(v.to_string()).or_default();
        for (attack, groups) in &group_cells[0].attacks {
            for group in groups.keys() {
                for f in fprs {
                    let key = f.to_string();
                    let vals: Vec<f64> = group_cells
                        .iter()
                        .filter_map(|c| c.attacks.get(attack)?.get(group)?.tpr.get(&key).copied())
                        .collect();
                    entry
                        .entry(attack.clone())
                        .or_default()
                        .entry(group.clone())
                        .or_default()
                        .insert(key, median(&vals));
                }
            }
        }
    }
    out
}

/// Class-dropout protocol: one cell per (seed, dropped set).
pub fn run_class_dropout(cfg: &ExperimentConfig, drop_sets: &[ClassDropSpec]) -> Result<ExperimentOutput> {
    let variants: Vec<Variant> = drop_sets
        .iter()
        .map(|d| Variant {
            dropped: d.clone(),
            per_class: None,
            label: drop_label(d),
        })
        .collect();
    run_grid(cfg, "class_dropout", &variants)
}

/// Sample-scarcity protocol: one cell per (seed, per-class cap). `None`
/// keeps the full public set; caps above a class size keep that class whole.
pub fn run_sample_scarcity(
    cfg: &ExperimentConfig,
    ks: &[Option<usize>],
    dropped: &ClassDropSpec,
) -> Result<ExperimentOutput> {
    if ks.contains(&Some(0)) {
        return Err(AuditError::invalid("per-class sample counts must be >= 1"));
    }
    let variants: Vec<Variant> = ks
        .iter()
        .map(|&k| {
            let cap = k.map_or("kfull".to_string(), |k| format!("k{k}"));
            Variant {
                dropped: dropped.clone(),
                per_class: k,
                label: if dropped.is_empty() { cap } else { format!("{}_{cap}", drop_label(dropped)) },
            }
        })
        .collect();
    run_grid(cfg, "sample_scarcity", &variants)
}
