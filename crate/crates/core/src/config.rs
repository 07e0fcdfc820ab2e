//! Flat `key = value` run configuration.
//!
//! One key per line; `#` starts a comment; blank lines are ignored. Lists are
//! comma separated. Class-drop grids separate cells with commas and classes
//! within a cell with `+` (`drop = 0,1+2` is two cells), `none` being the
//! empty cell. Per-class caps accept `full` (`ks = 10,full`).
//!
//! `experiment`, `output_dir` and `seeds` are required; every other key
//! falls back to the defaults of [`ExperimentConfig`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::attacks::{QuantileArch, QuantileMode};
use crate::dataspace::{ClassDropSpec, SynthConfig};
use crate::error::{AuditError, Result};
use crate::evaluation::{AttackSpec, DataSource, ExperimentConfig};
use crate::netcore::{Architecture, OptConfig, Optimizer};
use crate::scores::{ScoreFn, ScoreKind, DEFAULT_CLIP_EPSILON};
use crate::transfer::DEFAULT_GMM_COMPONENTS;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    ClassDropout,
    SampleScarcity,
    TransferDiagnostics,
    SingleAttack,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::ClassDropout => "class_dropout",
            ExperimentKind::SampleScarcity => "sample_scarcity",
            ExperimentKind::TransferDiagnostics => "transfer_diagnostics",
            ExperimentKind::SingleAttack => "single_attack",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            ExperimentKind::ClassDropout,
            ExperimentKind::SampleScarcity,
            ExperimentKind::TransferDiagnostics,
            ExperimentKind::SingleAttack,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSpec {
    Synthetic(SynthConfig),
    /// Dataset file in the `read_dataset` text format.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetSpec {
    pub arch: Architecture,
    pub opt: OptConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub kind: ExperimentKind,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub data: DataSpec,
    pub split: [f64; 3],
    pub calib_fraction: f64,
    pub member_fraction: f64,
    pub target: TargetSpec,
    pub attacks: Vec<AttackSpec>,
    pub alphas: Vec<f64>,
    pub clip_epsilon: f64,
    /// Class-drop grid cells.
    pub drops: Vec<Vec<usize>>,
    pub ks: Vec<Option<usize>>,
    pub gmm_components: usize,
    /// Sample size of the constructed transfer instances.
    pub theorem_n: usize,
}

const KEYS: &[&str] = &[
    "experiment",
    "output_dir",
    "seeds",
    "data",
    "classes",
    "feature_dim",
    "per_class",
    "mean_radius",
    "spread_min",
    "spread_max",
    "split",
    "calib_fraction",
    "member_fraction",
    "target_hidden",
    "target_epochs",
    "target_lr",
    "target_batch",
    "target_optimizer",
    "attacks",
    "alphas",
    "clip_epsilon",
    "marginal_score",
    "lira_score",
    "lira_shadows",
    "lira_subset_fraction",
    "quantile_score",
    "quantile_mode",
    "quantile_hidden",
    "quantile_epochs",
    "quantile_lr",
    "quantile_batch",
    "drop",
    "ks",
    "gmm_components",
    "theorem_n",
];

/// Keys with their values and the line each appeared on.
struct Entries {
    map: BTreeMap<String, (usize, String)>,
    last_line: usize,
}

impl Entries {
    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut last_line = 0;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            last_line = line;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| AuditError::Config {
                line,
                msg: format!("expected `key = value`, found `{content}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(AuditError::Config {
                    line,
                    msg: format!("unknown key `{key}`"),
                });
            }
            if let Some((first, _)) = map.insert(key.to_string(), (line, value.to_string())) {
                return Err(AuditError::Config {
                    line,
                    msg: format!("key `{key}` already set on line {first}"),
                });
            }
        }
        Ok(Self { map, last_line })
    }

    fn raw(&self, key: &str) -> Option<(usize, &str)> {
        self.map.get(key).map(|(l, v)| (*l, v.as_str()))
    }

    fn required(&self, key: &str) -> Result<(usize, &str)> {
        self.raw(key).ok_or_else(|| AuditError::Config {
            line: self.last_line + 1,
            msg: format!("missing required key `{key}`"),
        })
    }

    fn get<V>(&self, key: &str, default: V, parse: impl Fn(&str) -> Option<V>, what: &str) -> Result<V> {
        match self.raw(key) {
            None => Ok(default),
            Some((line, v)) => typed(line, key, v, parse, what),
        }
    }
}

fn typed<V>(line: usize, key: &str, v: &str, parse: impl Fn(&str) -> Option<V>, what: &str) -> Result<V> {
    parse(v).ok_or_else(|| AuditError::Config {
        line,
        msg: format!("`{key}` expects {what}, found `{v}`"),
    })
}

fn list<V>(v: &str, item: impl Fn(&str) -> Option<V>) -> Option<Vec<V>> {
    let out: Option<Vec<V>> = v.split(',').map(|s| item(s.trim())).collect();
    out.filter(|l| !l.is_empty())
}

fn float(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn hidden(s: &str) -> Option<Architecture> {
    if s == "none" {
        return Some(Architecture::linear());
    }
    list(s, |w| w.parse::<usize>().ok().filter(|&w| w > 0)).map(Architecture::new)
}

fn drop_cells(s: &str) -> Option<Vec<Vec<usize>>> {
    list(s, |cell| {
        if cell == "none" {
            Some(Vec::new())
        } else {
            cell.split('+').map(|c| c.trim().parse::<usize>().ok()).collect()
        }
    })
}

fn cap(s: &str) -> Option<Option<usize>> {
    if s == "full" {
        Some(None)
    } else {
        s.parse::<usize>().ok().filter(|&k| k > 0).map(Some)
    }
}

fn score(s: &str) -> Option<ScoreKind> {
    ScoreKind::parse(s)
}

fn join<V>(items: &[V], f: impl Fn(&V) -> String) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(",")
}

fn hidden_str(a: &Architecture) -> String {
    if a.hidden.is_empty() {
        "none".into()
    } else {
        join(&a.hidden, |w| w.to_string())
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AuditError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let e = Entries::parse(text)?;
        let defaults = ExperimentConfig::default();
        let base_synth = SynthConfig::default();

        let (line, v) = e.required("experiment")?;
        let kind = typed(line, "experiment", v, ExperimentKind::parse, "one of class_dropout, sample_scarcity, transfer_diagnostics, single_attack")?;
        let (_, v) = e.required("output_dir")?;
        let output_dir = PathBuf::from(v);
        let (line, v) = e.required("seeds")?;
        let seeds = typed(line, "seeds", v, |s| list(s, |x| x.parse::<u64>().ok()), "a list of unsigned integers")?;

        let data = match e.raw("data") {
            None | Some((_, "synthetic")) => DataSpec::Synthetic(SynthConfig {
                class_count: e.get("classes", base_synth.class_count, |s| s.parse().ok(), "an integer")?,
                feature_dim: e.get("feature_dim", base_synth.feature_dim, |s| s.parse().ok(), "an integer")?,
                per_class_count: e.get("per_class", base_synth.per_class_count, |s| s.parse().ok(), "an integer")?,
                mean_radius: e.get("mean_radius", base_synth.mean_radius, float, "a number")?,
                spread_min: e.get("spread_min", base_synth.spread_min, float, "a number")?,
                spread_max: e.get("spread_max", base_synth.spread_max, float, "a number")?,
                seed: 0,
            }),
            Some((line, path)) => {
                for key in ["classes", "feature_dim", "per_class", "mean_radius", "spread_min", "spread_max"] {
                    if let Some((l, _)) = e.raw(key) {
                        return Err(AuditError::Config {
                            line: l,
                            msg: format!("`{key}` only applies to synthetic data"),
                        });
                    }
                }
                let p = PathBuf::from(path);
                if !p.is_file() {
                    return Err(AuditError::Config {
                        line,
                        msg: format!("data file `{path}` does not exist"),
                    });
                }
                DataSpec::File(p)
            }
        };
        if let DataSpec::Synthetic(s) = &data {
            s.validate().map_err(|err| AuditError::Config {
                line: e.raw("classes").or(e.raw("spread_min")).map_or(0, |(l, _)| l),
                msg: err.to_string(),
            })?;
        }

        let split = e.get(
            "split",
            defaults.split,
            |s| list(s, float).and_then(|v| <[f64; 3]>::try_from(v).ok()),
            "three comma-separated fractions",
        )?;
        let calib_fraction = e.get("calib_fraction", defaults.calib_fraction, float, "a number")?;
        let member_fraction = e.get("member_fraction", defaults.member_fraction, float, "a number")?;

        let target = TargetSpec {
            arch: e.get("target_hidden", defaults.target_arch.clone(), hidden, "comma-separated widths or `none`")?,
            opt: OptConfig {
                epochs: e.get("target_epochs", defaults.target_opt.epochs, |s| s.parse().ok(), "an integer")?,
                learning_rate: e.get("target_lr", defaults.target_opt.learning_rate, float, "a number")?,
                batch_size: e.get("target_batch", defaults.target_opt.batch_size, |s| s.parse().ok(), "an integer")?,
                algorithm: e.get("target_optimizer", defaults.target_opt.algorithm, Optimizer::parse, "`adam` or `sgd`")?,
                ..defaults.target_opt.clone()
            },
        };

        let clip_epsilon = e.get("clip_epsilon", DEFAULT_CLIP_EPSILON, float, "a number")?;
        let score_fn = |key: &str, default: ScoreKind| -> Result<ScoreFn> {
            let kind = e.get(key, default, score, "a score kind")?;
            ScoreFn::with_clip(kind, clip_epsilon).map_err(|err| AuditError::Config {
                line: e.raw("clip_epsilon").map_or(0, |(l, _)| l),
                msg: err.to_string(),
            })
        };
        let names = e.get(
            "attacks",
            vec!["marginal".to_string(), "lira".to_string(), "quantile".to_string()],
            |s| list(s, |a| ["marginal", "lira", "quantile"].contains(&a).then(|| a.to_string())),
            "a list drawn from marginal, lira, quantile",
        )?;
        let (mut default_marginal, mut default_lira, mut default_quantile) = (None, None, None);
        for a in &defaults.attacks {
            match a {
                AttackSpec::Marginal { score_fn } => default_marginal = Some(score_fn.kind),
                AttackSpec::Lira {
                    score_fn,
                    shadow_count,
                    subset_fraction,
                } => default_lira = Some((score_fn.kind, *shadow_count, *subset_fraction)),
                AttackSpec::Quantile {
                    score_fn,
                    mode,
                    arch,
                    opt,
                } => default_quantile = Some((score_fn.kind, *mode, arch.clone(), opt.clone())),
            }
        }
        let marginal_kind = default_marginal.unwrap_or(ScoreKind::TrueLabelMargin);
        let (lira_kind, lira_shadows, lira_fraction) = default_lira.unwrap_or((ScoreKind::TrueLabelConfidence, 16, 0.5));
        let (q_kind, q_mode, q_arch, q_opt) =
            default_quantile.unwrap_or((ScoreKind::TrueLabelMargin, QuantileMode::Gaussian, QuantileArch::Network(Architecture::default()), OptConfig::default()));
        let mut attacks = Vec::new();
        for name in &names {
            let spec = match name.as_str() {
                "marginal" => AttackSpec::Marginal {
                    score_fn: score_fn("marginal_score", marginal_kind)?,
                },
                "lira" => AttackSpec::Lira {
                    score_fn: score_fn("lira_score", lira_kind)?,
                    shadow_count: e.get("lira_shadows", lira_shadows, |s| s.parse().ok(), "an integer")?,
                    subset_fraction: e.get("lira_subset_fraction", lira_fraction, float, "a number")?,
                },
                _ => AttackSpec::Quantile {
                    score_fn: score_fn("quantile_score", q_kind)?,
                    mode: e.get("quantile_mode", q_mode, QuantileMode::parse, "`gaussian` or `pinball`")?,
                    arch: e.get(
                        "quantile_hidden",
                        q_arch.clone(),
                        |s| if s == "constant" { Some(QuantileArch::Constant) } else { hidden(s).map(QuantileArch::Network) },
                        "comma-separated widths, `none` or `constant`",
                    )?,
                    opt: OptConfig {
                        epochs: e.get("quantile_epochs", q_opt.epochs, |s| s.parse().ok(), "an integer")?,
                        learning_rate: e.get("quantile_lr", q_opt.learning_rate, float, "a number")?,
                        batch_size: e.get("quantile_batch", q_opt.batch_size, |s| s.parse().ok(), "an integer")?,
                        ..q_opt.clone()
                    },
                },
            };
            if attacks.iter().any(|a: &AttackSpec| a.name() == spec.name()) {
                return Err(AuditError::Config {
                    line: e.raw("attacks").map_or(0, |(l, _)| l),
                    msg: format!("attack `{name}` listed twice"),
                });
            }
            attacks.push(spec);
        }

        let alphas = e.get("alphas", defaults.fpr_targets.clone(), |s| list(s, float), "a list of numbers")?;
        let drops = e.get("drop", vec![Vec::new()], drop_cells, "cells like `0`, `0+1` or `none`, comma separated")?;
        let ks = e.get("ks", vec![Some(10), None], |s| list(s, cap), "a list of positive integers or `full`")?;
        let gmm_components = e.get("gmm_components", DEFAULT_GMM_COMPONENTS, |s| s.parse().ok().filter(|&k| k > 0), "a positive integer")?;
        let theorem_n = e.get("theorem_n", 10_000, |s| s.parse().ok().filter(|&n| n >= 100), "an integer of at least 100")?;

        let cfg = RunConfig {
            kind,
            output_dir,
            seeds,
            data,
            split,
            calib_fraction,
            member_fraction,
            target,
            attacks,
            alphas,
            clip_epsilon,
            drops,
            ks,
            gmm_components,
            theorem_n,
        };
        if kind == ExperimentKind::SingleAttack && cfg.attacks.len() != 1 {
            return Err(AuditError::Config {
                line: e.raw("attacks").map_or(e.last_line + 1, |(l, _)| l),
                msg: "single_attack needs exactly one entry in `attacks`".into(),
            });
        }
        if kind == ExperimentKind::SampleScarcity && cfg.drops.len() != 1 {
            return Err(AuditError::Config {
                line: e.raw("drop").map_or(0, |(l, _)| l),
                msg: "sample_scarcity takes a single `drop` cell".into(),
            });
        }
        if let DataSpec::Synthetic(s) = &cfg.data {
            cfg.drop_specs(s.class_count).map_err(|err| AuditError::Config {
                line: e.raw("drop").map_or(0, |(l, _)| l),
                msg: err.to_string(),
            })?;
        }
        cfg.experiment_config(DataSource::Synthetic(SynthConfig::default()), 0)
            .validate()
            .map_err(|err| AuditError::Config {
                line: 0,
                msg: err.to_string(),
            })?;
        Ok(cfg)
    }

    /// The grid's class-drop cells for a dataset with `class_count` classes.
    pub fn drop_specs(&self, class_count: usize) -> Result<Vec<ClassDropSpec>> {
        self.drops.iter().map(|c| ClassDropSpec::new(c.iter().copied(), class_count)).collect()
    }

    /// Experiment settings with every seed shifted by `seed_offset`.
    pub fn experiment_config(&self, data: DataSource, seed_offset: u64) -> ExperimentConfig {
        ExperimentConfig {
            data,
            split: self.split,
            calib_fraction: self.calib_fraction,
            member_fraction: self.member_fraction,
            target_arch: self.target.arch.clone(),
            target_opt: self.target.opt.clone(),
            attacks: self.attacks.clone(),
            fpr_targets: self.alphas.clone(),
            seeds: self.seeds.iter().map(|s| s.wrapping_add(seed_offset)).collect(),
        }
    }

    /// Canonical `key=value` pairs; parsing their text form yields `self`.
    pub fn echo(&self) -> Vec<(&'static str, String)> {
        let mut out: Vec<(&'static str, String)> = vec![
            ("experiment", self.kind.name().into()),
            ("output_dir", self.output_dir.display().to_string()),
            ("seeds", join(&self.seeds, |s| s.to_string())),
        ];
        match &self.data {
            DataSpec::Synthetic(s) => {
                out.push(("data", "synthetic".into()));
                out.push(("classes", s.class_count.to_string()));
                out.push(("feature_dim", s.feature_dim.to_string()));
                out.push(("per_class", s.per_class_count.to_string()));
                out.push(("mean_radius", s.mean_radius.to_string()));
                out.push(("spread_min", s.spread_min.to_string()));
                out.push(("spread_max", s.spread_max.to_string()));
            }
            DataSpec::File(p) => out.push(("data", p.display().to_string())),
        }
        out.push(("split", join(&self.split, |v| v.to_string())));
        out.push(("calib_fraction", self.calib_fraction.to_string()));
        out.push(("member_fraction", self.member_fraction.to_string()));
        out.push(("target_hidden", hidden_str(&self.target.arch)));
        out.push(("target_epochs", self.target.opt.epochs.to_string()));
        out.push(("target_lr", self.target.opt.learning_rate.to_string()));
        out.push(("target_batch", self.target.opt.batch_size.to_string()));
        out.push(("target_optimizer", self.target.opt.algorithm.name().into()));
        out.push(("attacks", join(&self.attacks, |a| a.name().to_string())));
        out.push(("alphas", join(&self.alphas, |v| v.to_string())));
        out.push(("clip_epsilon", self.clip_epsilon.to_string()));
        for a in &self.attacks {
            match a {
                AttackSpec::Marginal { score_fn } => out.push(("marginal_score", score_fn.kind.name().into())),
                AttackSpec::Lira {
                    score_fn,
                    shadow_count,
                    subset_fraction,
                } => {
                    out.push(("lira_score", score_fn.kind.name().into()));
                    out.push(("lira_shadows", shadow_count.to_string()));
                    out.push(("lira_subset_fraction", subset_fraction.to_string()));
                }
                AttackSpec::Quantile {
                    score_fn,
                    mode,
                    arch,
                    opt,
                } => {
                    out.push(("quantile_score", score_fn.kind.name().into()));
                    out.push(("quantile_mode", mode.name().into()));
                    out.push((
                        "quantile_hidden",
                        match arch {
                            QuantileArch::Constant => "constant".into(),
                            QuantileArch::Network(a) => hidden_str(a),
                        },
                    ));
                    out.push(("quantile_epochs", opt.epochs.to_string()));
                    out.push(("quantile_lr", opt.learning_rate.to_string()));
                    out.push(("quantile_batch", opt.batch_size.to_string()));
                }
            }
        }
        out.push((
            "drop",
            join(&self.drops, |c| if c.is_empty() { "none".into() } else { join(c, |v| v.to_string()).replace(',', "+") }),
        ));
        out.push(("ks", join(&self.ks, |k| k.map_or("full".into(), |k| k.to_string()))));
        out.push(("gmm_components", self.gmm_components.to_string()));
        out.push(("theorem_n", self.theorem_n.to_string()));
        out
    }

    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.echo() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "# smoke\nexperiment = class_dropout\noutput_dir = out\nseeds = 0\n";

    fn err_line(text: &str) -> (usize, String) {
        match RunConfig::parse(text) {
            Err(AuditError::Config { line, msg }) => (line, msg),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        let d = ExperimentConfig::default();
        assert_eq!(c.kind, ExperimentKind::ClassDropout);
        assert_eq!(c.seeds, vec![0]);
        assert_eq!(c.attacks, d.attacks);
        assert_eq!(c.alphas, d.fpr_targets);
        assert_eq!(c.target.opt, d.target_opt);
        assert_eq!(c.drops, vec![Vec::<usize>::new()]);
        assert_eq!(c.data, DataSpec::Synthetic(SynthConfig::default()));
    }

    #[test]
    fn echo_round_trips() {
        let text = format!(
            "{MINIMAL}alphas = 0.05, 0.01\ndrop = none,0,1+2\nks = 10,full\nattacks = quantile,marginal\nquantile_hidden = constant\nquantile_mode = pinball\ntarget_hidden = 8\nmean_radius = 1.5\n"
        );
        let c = RunConfig::parse(&text).unwrap();
        let again = RunConfig::parse(&c.to_config_string()).unwrap();
        assert_eq!(c, again);
        assert_eq!(again.to_config_string(), c.to_config_string());
    }

    #[test]
    fn alpha_and_grid_lists() {
        let c = RunConfig::parse(&format!("{MINIMAL}alphas=0.05,0.01\ndrop=0+1,2\nks=10,full\n")).unwrap();
        assert_eq!(c.alphas, vec![0.05, 0.01]);
        assert_eq!(c.drops, vec![vec![0, 1], vec![2]]);
        assert_eq!(c.ks, vec![Some(10), None]);
    }

    #[test]
    fn misspelled_key_names_key_and_line() {
        let (line, msg) = err_line(&format!("{MINIMAL}\nalpha = 0.05\n"));
        assert_eq!(line, 6);
        assert!(msg.contains("`alpha`"), "{msg}");
    }

    #[test]
    fn type_mismatch_names_line() {
        let (line, msg) = err_line("experiment = class_dropout\noutput_dir = o\nseeds = zero\n");
        assert_eq!(line, 3);
        assert!(msg.contains("seeds"));
        let (line, _) = err_line(&format!("{MINIMAL}target_epochs = many\n"));
        assert_eq!(line, 5);
    }

    #[test]
    fn missing_required_key() {
        let (_, msg) = err_line("experiment = class_dropout\noutput_dir = o\n");
        assert!(msg.contains("`seeds`"));
    }

    #[test]
    fn duplicate_and_malformed_lines() {
        assert_eq!(err_line(&format!("{MINIMAL}seeds = 1\n")).0, 5);
        assert_eq!(err_line(&format!("{MINIMAL}just words\n")).0, 5);
    }

    #[test]
    fn referenced_file_must_exist() {
        let (line, msg) = err_line(&format!("{MINIMAL}data = /definitely/not/here.csv\n"));
        assert_eq!(line, 5);
        assert!(msg.contains("does not exist"));
    }

    #[test]
    fn semantic_checks() {
        assert!(RunConfig::parse(&format!("{MINIMAL}drop = 8\n")).is_err());
        assert!(RunConfig::parse("experiment = single_attack\noutput_dir = o\nseeds = 0\n").is_err());
        assert!(RunConfig::parse("experiment = single_attack\noutput_dir = o\nseeds = 0\nattacks = marginal\n").is_ok());
        assert!(RunConfig::parse(&format!("{MINIMAL}attacks = lira,lira\n")).is_err());
        assert!(RunConfig::parse(&format!("{MINIMAL}alphas = 0.05,1.5\n")).is_err());
        assert!(RunConfig::parse(&format!("{MINIMAL}ks = 0\n")).is_err());
    }
}
