use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use tempfile::TempDir;

const SMOKE: &str = "\
# class-dropout smoke run
experiment = class_dropout
seeds = 0
classes = 4
feature_dim = 8
per_class = 120
target_hidden = 16
target_epochs = 30
lira_shadows = 16
quantile_hidden = 8
quantile_epochs = 30
drop = 0
alphas = 0.05,0.01
";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mia-audit"));
    c.env_remove("MIA_AUDIT_SEED_OFFSET");
    c
}

fn write_config(dir: &Path, name: &str, out: &Path, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, format!("output_dir = {}\n{body}", out.display())).unwrap();
    path
}

fn run(args: &[&str], cfg: &Path) -> Output {
    bin().args(args).arg(cfg).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn smoke_run_finishes_quickly_and_writes_manifest() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), "smoke.cfg", &out, SMOKE);
    let start = Instant::now();
    let o = run(&["run"], &cfg);
    let elapsed = start.elapsed();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(elapsed < Duration::from_secs(60), "smoke run took {elapsed:?}");

    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    let files = manifest["files"].as_object().unwrap();
    for name in ["report.json", "config.txt", "roc_quantile_unseen_seed0_drop0.csv", "roc_lira_all_seed0_drop0.csv"] {
        assert!(files.contains_key(name), "{name} missing from manifest");
    }
    for name in files.keys() {
        assert!(out.join(name).is_file(), "{name} listed but absent");
    }
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["experiment"], "class_dropout");
    assert!(report["config"].get("output_dir").is_none());
    let probs = &report["cells"][0]["diagnostics"]["shadow_dropped_label_probability"];
    assert_eq!(probs.as_array().unwrap().len(), 16);
}

#[test]
fn repeated_runs_and_worker_counts_give_identical_bytes() {
    let tmp = TempDir::new().unwrap();
    let dirs: Vec<PathBuf> = (0..3).map(|i| tmp.path().join(format!("out{i}"))).collect();
    let body = SMOKE.replace("seeds = 0", "seeds = 0,1");
    let reports: Vec<Vec<u8>> = dirs
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let cfg = write_config(tmp.path(), &format!("c{i}.cfg"), d, &body);
            let threads = if i == 2 { "4" } else { "1" };
            let o = bin().args(["run", "--parallel", threads]).arg(&cfg).output().unwrap();
            assert!(o.status.success(), "{}", stderr(&o));
            std::fs::read(d.join("report.json")).unwrap()
        })
        .collect();
    assert_eq!(reports[0], reports[1]);
    assert_eq!(reports[0], reports[2]);
    let csv = "roc_quantile_all_seed1_drop0.csv";
    assert_eq!(std::fs::read(dirs[0].join(csv)).unwrap(), std::fs::read(dirs[2].join(csv)).unwrap());
}

#[test]
fn unwritable_output_dir_fails_before_training() {
    let tmp = TempDir::new().unwrap();
    let blocker = tmp.path().join("plain-file");
    std::fs::write(&blocker, "not a directory").unwrap();
    let cfg = write_config(tmp.path(), "c.cfg", &blocker.join("out"), &SMOKE.replace("target_epochs = 30", "target_epochs = 100000"));
    let start = Instant::now();
    let o = run(&["run"], &cfg);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(start.elapsed() < Duration::from_secs(5));
    assert!(stderr(&o).starts_with("error: io error"), "{}", stderr(&o));
}

#[test]
fn config_errors_exit_2_and_name_the_line() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), "c.cfg", &out, &format!("{SMOKE}quantile_epoch = 3\n"));
    let o = run(&["run"], &cfg);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("line 15") && err.contains("quantile_epoch"), "{err}");
    assert!(!out.exists());

    let cfg = write_config(tmp.path(), "d.cfg", &out, &SMOKE.replace("classes = 4", "classes = four"));
    let o = run(&["run"], &cfg);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 5"), "{}", stderr(&o));
}

#[test]
fn missing_config_file_is_an_io_error() {
    let o = bin().args(["run", "/nonexistent/run.cfg"]).output().unwrap();
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn bad_arguments_exit_2() {
    let o = bin().args(["run", "--parallel", "0", "x.cfg"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = bin().arg("frobnicate").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn echo_output_parses_back_to_itself() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), "c.cfg", &out, SMOKE);
    let o = run(&["gen-data", "--echo"], &cfg);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let echo: String = text.lines().take_while(|l| l.contains(" = ")).map(|l| format!("{l}\n")).collect();
    let again = tmp.path().join("echo.cfg");
    std::fs::write(&again, &echo).unwrap();
    let o2 = run(&["gen-data", "--echo"], &again);
    assert!(o2.status.success(), "{}", stderr(&o2));
    assert!(String::from_utf8(o2.stdout).unwrap().starts_with(&echo));
    assert!(out.join("data_seed0.txt").is_file());
}

#[test]
fn seed_offset_shifts_every_seed() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let cfg_a = write_config(tmp.path(), "a.cfg", &a, SMOKE);
    let cfg_b = write_config(tmp.path(), "b.cfg", &b, &SMOKE.replace("seeds = 0", "seeds = 3"));
    let o = bin().env("MIA_AUDIT_SEED_OFFSET", "3").arg("run").arg(&cfg_a).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(run(&["run"], &cfg_b).status.success());
    let cells = |d: &Path| {
        let v: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("report.json")).unwrap()).unwrap();
        v["cells"].clone()
    };
    assert_eq!(cells(&a), cells(&b));
    assert_eq!(cells(&a)[0]["id"], "seed3_drop0");

    let o = bin().env("MIA_AUDIT_SEED_OFFSET", "minus one").arg("run").arg(&cfg_a).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn stage_subcommands_write_their_artifacts() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), "c.cfg", &out, SMOKE);
    for stage in ["train-target", "attack", "transfer"] {
        let o = run(&[stage], &cfg);
        assert!(o.status.success(), "{stage}: {}", stderr(&o));
    }
    for f in ["target_seed0.model", "public_seed0.txt", "attack_quantile_seed0/attack.meta", "transfer_report.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let t: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("transfer_report.json")).unwrap()).unwrap();
    let r = &t["runs"][0];
    for key in ["pca_eigenvalues", "gmm_params", "linear_fit_mse", "multiaccuracy_max_violation", "coverage_P", "coverage_Q"] {
        assert!(r.get(key).is_some(), "{key}");
    }
    let o = run(&["evaluate"], &write_config(tmp.path(), "t.cfg", &out, &SMOKE.replace("class_dropout", "transfer_diagnostics")));
    assert_eq!(o.status.code(), Some(2));
}
