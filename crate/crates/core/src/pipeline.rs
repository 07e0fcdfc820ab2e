//! End-to-end runs driven by a [`RunConfig`], plus the individual stages the
//! command-line tool exposes for inspection.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::attacks::write_attack;
use crate::config::{DataSpec, ExperimentKind, RunConfig};
use crate::dataspace::{read_dataset, write_dataset, ClassDropSpec, LabeledDataset};
use crate::error::{AuditError, Result};
use crate::evaluation::{
    fit_attacks, run_class_dropout, run_sample_scarcity, seed_stage, DataSource, EvalReport, ExperimentConfig,
};
use crate::netcore::write_model;
use crate::transfer::{smoothness_scenario, theorem_check, transfer_diagnostics, RatioBlend, ScenarioResult, TransferCheck, TransferReport};

pub const SEED_OFFSET_ENV: &str = "MIA_AUDIT_SEED_OFFSET";
pub const MANIFEST: &str = "manifest.json";

/// Ratio blends of the smoothness scenarios, least smooth first.
pub const SMOOTHNESS_BLENDS: [f64; 3] = [1.0, 0.5, 0.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads; `None` lets rayon decide.
    pub parallel: Option<usize>,
    pub seed_offset: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            parallel: Some(1),
            seed_offset: 0,
        }
    }
}

impl RunOptions {
    /// Reads the seed offset from the environment; unset means 0.
    pub fn from_env(parallel: Option<usize>) -> Result<Self> {
        let seed_offset = match std::env::var(SEED_OFFSET_ENV) {
            Ok(v) => v.trim().parse().map_err(|_| AuditError::Config {
                line: 0,
                msg: format!("{SEED_OFFSET_ENV} must be an unsigned integer, found `{v}`"),
            })?,
            Err(std::env::VarError::NotPresent) => 0,
            Err(e) => {
                return Err(AuditError::Config {
                    line: 0,
                    msg: format!("{SEED_OFFSET_ENV}: {e}"),
                })
            }
        };
        Ok(Self { parallel, seed_offset })
    }
}

/// Files written by a run, relative to the output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub files: Vec<String>,
}

/// Creates `dir` and proves it writable by writing and removing a probe file.
pub fn ensure_writable(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| AuditError::io(dir, e))?;
    let probe = dir.join(".mia-audit-write-probe");
    std::fs::write(&probe, b"probe").map_err(|e| AuditError::io(&probe, e))?;
    std::fs::remove_file(&probe).map_err(|e| AuditError::io(&probe, e))
}

fn data_source(cfg: &RunConfig) -> Result<DataSource> {
    Ok(match &cfg.data {
        DataSpec::Synthetic(s) => DataSource::Synthetic(s.clone()),
        DataSpec::File(p) => DataSource::Loaded(read_dataset::<f64>(p)?),
    })
}

fn with_pool<R: Send>(parallel: Option<usize>, f: impl FnOnce() -> Result<R> + Send) -> Result<R> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = parallel {
        if n == 0 {
            return Err(AuditError::Config {
                line: 0,
                msg: "--parallel must be at least 1".into(),
            });
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| AuditError::invalid(format!("thread pool: {e}")))?;
    pool.install(f)
}

struct Writer {
    dir: PathBuf,
    files: Vec<String>,
}

impl Writer {
    fn put(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|e| AuditError::io(&path, e))?;
        self.files.push(name.to_string());
        Ok(())
    }

    /// Hashes every written file into the manifest.
    fn finish(mut self) -> Result<RunSummary> {
        self.files.sort();
        self.files.dedup();
        let mut hashes = BTreeMap::new();
        for name in &self.files {
            let path = self.dir.join(name);
            let bytes = std::fs::read(&path).map_err(|e| AuditError::io(&path, e))?;
            hashes.insert(name.clone(), hex::encode(Sha256::digest(&bytes)));
        }
        #[derive(Serialize)]
        struct Manifest<'a> {
            algorithm: &'static str,
            files: &'a BTreeMap<String, String>,
        }
        let text = serde_json::to_string_pretty(&Manifest {
            algorithm: "sha256",
            files: &hashes,
        })
        .expect("manifest serializes")
            + "\n";
        let path = self.dir.join(MANIFEST);
        std::fs::write(&path, text).map_err(|e| AuditError::io(&path, e))?;
        self.files.push(MANIFEST.to_string());
        Ok(RunSummary {
            output_dir: self.dir,
            files: self.files,
        })
    }
}

/// Config echo stored in reports. The output directory is left out so that
/// identical runs into different directories produce identical bytes.
fn report_config(cfg: &RunConfig, opts: &RunOptions) -> BTreeMap<String, String> {
    let mut m: BTreeMap<String, String> =
        cfg.echo().into_iter().filter(|(k, _)| *k != "output_dir").map(|(k, v)| (k.to_string(), v)).collect();
    m.insert("seed_offset".into(), opts.seed_offset.to_string());
    m
}

fn evaluation_report(cfg: &RunConfig, ecfg: &ExperimentConfig, class_count: usize) -> Result<(EvalReport, Vec<(String, String)>)> {
    let drops = cfg.drop_specs(class_count)?;
    let out = match cfg.kind {
        ExperimentKind::SampleScarcity => {
            let dropped = match drops.as_slice() {
                [one] => one.clone(),
                _ => {
                    return Err(AuditError::Config {
                        line: 0,
                        msg: "sample_scarcity takes a single `drop` cell".into(),
                    })
                }
            };
            run_sample_scarcity(ecfg, &cfg.ks, &dropped)?
        }
        _ => run_class_dropout(ecfg, &drops)?,
    };
    let mut report = out.report;
    report.experiment = cfg.kind.name().to_string();
    Ok((report, out.roc_files))
}

#[derive(Debug, Clone, Serialize)]
pub struct TheoremResult {
    pub alpha: f64,
    pub n: usize,
    pub seed: u64,
    pub linear: TransferCheck,
    pub orthogonal: TransferCheck,
}

#[derive(Debug, Clone, Serialize)]
pub struct TransferRunReport {
    pub config: BTreeMap<String, String>,
    /// One entry per (seed, drop cell, alpha).
    pub runs: Vec<TransferReport>,
    pub theorem: Vec<TheoremResult>,
    /// Per seed, one result per entry of [`SMOOTHNESS_BLENDS`].
    pub smoothness: Vec<Vec<ScenarioResult>>,
}

fn transfer_report(cfg: &RunConfig, ecfg: &ExperimentConfig, class_count: usize, opts: &RunOptions) -> Result<TransferRunReport> {
    use rayon::prelude::*;
    let drops = cfg.drop_specs(class_count)?;
    let mut jobs: Vec<(u64, &ClassDropSpec, f64)> = Vec::new();
    for &seed in &ecfg.seeds {
        for d in &drops {
            for &alpha in &cfg.alphas {
                jobs.push((seed, d, alpha));
            }
        }
    }
    let runs = jobs
        .par_iter()
        .map(|&(seed, d, alpha)| transfer_diagnostics(ecfg, d, alpha, cfg.gmm_components, seed))
        .collect::<Result<Vec<_>>>()?;
    let seed = ecfg.seeds[0];
    let theorem = cfg
        .alphas
        .par_iter()
        .map(|&alpha| {
            Ok(TheoremResult {
                alpha,
                n: cfg.theorem_n,
                seed,
                linear: theorem_check(RatioBlend::LINEAR, cfg.theorem_n, alpha, seed)?,
                orthogonal: theorem_check(RatioBlend::ORTHOGONAL, cfg.theorem_n, alpha, seed)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let smoothness = ecfg
        .seeds
        .par_iter()
        .map(|&s| {
            SMOOTHNESS_BLENDS
                .iter()
                .map(|&b| smoothness_scenario(RatioBlend(b), cfg.theorem_n, cfg.alphas[0], s))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TransferRunReport {
        config: report_config(cfg, opts),
        runs,
        theorem,
        smoothness,
    })
}

fn prepare(cfg: &RunConfig, opts: &RunOptions) -> Result<(ExperimentConfig, usize)> {
    ensure_writable(&cfg.output_dir)?;
    let data = data_source(cfg)?;
    let class_count = data.class_count();
    Ok((cfg.experiment_config(data, opts.seed_offset), class_count))
}

fn write_evaluation(w: &mut Writer, cfg: &RunConfig, ecfg: &ExperimentConfig, class_count: usize, opts: &RunOptions) -> Result<()> {
    let (mut report, rocs) = evaluation_report(cfg, ecfg, class_count)?;
    report.config = report_config(cfg, opts);
    for (name, csv) in &rocs {
        w.put(name, csv)?;
    }
    w.put("report.json", &report.to_json())
}

fn write_transfer(w: &mut Writer, cfg: &RunConfig, ecfg: &ExperimentConfig, class_count: usize, opts: &RunOptions) -> Result<()> {
    let report = transfer_report(cfg, ecfg, class_count, opts)?;
    w.put("transfer_report.json", &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"))
}

fn writer(cfg: &RunConfig) -> Result<Writer> {
    let mut w = Writer {
        dir: cfg.output_dir.clone(),
        files: Vec::new(),
    };
    w.put("config.txt", &cfg.to_config_string())?;
    Ok(w)
}

/// Runs the configured experiment and writes its artifacts and manifest.
/// The output directory is checked before any training starts.
pub fn run(cfg: &RunConfig, opts: &RunOptions) -> Result<RunSummary> {
    let (ecfg, class_count) = prepare(cfg, opts)?;
    with_pool(opts.parallel, || {
        let mut w = writer(cfg)?;
        match cfg.kind {
            ExperimentKind::TransferDiagnostics => write_transfer(&mut w, cfg, &ecfg, class_count, opts)?,
            _ => write_evaluation(&mut w, cfg, &ecfg, class_count, opts)?,
        }
        w.finish()
    })
}

/// Evaluation stage only: `report.json` and ROC curves.
pub fn evaluate(cfg: &RunConfig, opts: &RunOptions) -> Result<RunSummary> {
    if cfg.kind == ExperimentKind::TransferDiagnostics {
        return Err(AuditError::Config {
            line: 0,
            msg: "evaluate needs an evaluation experiment, not transfer_diagnostics".into(),
        });
    }
    run(cfg, opts)
}

/// Transfer stage only: `transfer_report.json`, whatever the experiment kind.
pub fn transfer(cfg: &RunConfig, opts: &RunOptions) -> Result<RunSummary> {
    let (ecfg, class_count) = prepare(cfg, opts)?;
    with_pool(opts.parallel, || {
        let mut w = writer(cfg)?;
        write_transfer(&mut w, cfg, &ecfg, class_count, opts)?;
        w.finish()
    })
}

fn seeds(cfg: &RunConfig, opts: &RunOptions) -> Vec<u64> {
    cfg.seeds.iter().map(|s| s.wrapping_add(opts.seed_offset)).collect()
}

/// Writes the dataset each seed would use.
pub fn gen_data(cfg: &RunConfig, opts: &RunOptions) -> Result<RunSummary> {
    let (ecfg, _) = prepare(cfg, opts)?;
    let mut w = writer(cfg)?;
    for seed in seeds(cfg, opts) {
        let data: LabeledDataset<f64> = ecfg.data.materialize(seed)?;
        let name = format!("data_seed{seed}.txt");
        write_dataset(&data, &cfg.output_dir.join(&name))?;
        w.files.push(name);
    }
    w.finish()
}

/// Writes each seed's splits and trained target model.
pub fn train_target(cfg: &RunConfig, opts: &RunOptions) -> Result<RunSummary> {
    let (ecfg, _) = prepare(cfg, opts)?;
    with_pool(opts.parallel, || {
        let mut w = writer(cfg)?;
        let mut acc = BTreeMap::new();
        for seed in seeds(cfg, opts) {
            let st = seed_stage(&ecfg, seed)?;
            for (part, data) in [("private", &st.private), ("public", &st.public), ("holdout", &st.holdout)] {
                let name = format!("{part}_seed{seed}.txt");
                write_dataset(data, &cfg.output_dir.join(&name))?;
                w.files.push(name);
            }
            let name = format!("target_seed{seed}.model");
            write_model(&st.target, &cfg.output_dir.join(&name))?;
            w.files.push(name);
            acc.insert(format!("seed{seed}"), [st.train_accuracy, st.holdout_accuracy]);
        }
        w.put("target_accuracy.json", &(serde_json::to_string_pretty(&acc).expect("accuracies serialize") + "\n"))?;
        w.finish()
    })
}

/// Fits every configured attack at the first alpha, dropping the first
/// `drop` cell, and writes one directory per attack and seed.
pub fn attack(cfg: &RunConfig, opts: &RunOptions) -> Result<RunSummary> {
    let (ecfg, class_count) = prepare(cfg, opts)?;
    let dropped = cfg.drop_specs(class_count)?.into_iter().next().unwrap_or_else(ClassDropSpec::none);
    with_pool(opts.parallel, || {
        let mut w = writer(cfg)?;
        for seed in seeds(cfg, opts) {
            let (_, attacks) = fit_attacks(&ecfg, seed, &dropped, cfg.alphas[0])?;
            for a in &attacks {
                let sub = format!("attack_{}_seed{seed}", a.kind());
                let dir = cfg.output_dir.join(&sub);
                write_attack(a, &dir)?;
                list_files(&dir, &sub, &mut w.files)?;
            }
        }
        w.finish()
    })
}

/// Appends every file below `dir` as `prefix/relative/path`.
fn list_files(dir: &Path, prefix: &str, out: &mut Vec<String>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| AuditError::io(dir, e))?
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| AuditError::io(dir, e))?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let name = format!("{prefix}/{}", e.file_name().to_string_lossy());
        if e.path().is_dir() {
            list_files(&e.path(), &name, out)?;
        } else {
            out.push(name);
        }
    }
    Ok(())
}
