use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BASE: &str = r#"output_dir = "out"
seeds = [2]

[data]
attributes = 2
samples = 200
side = 12

[model]
conv1 = 3
blocks = [4, 4]
embedding = 6

[train]
epochs = 2
batch_size = 20
eval_triplets = 40
"#;

fn setup(extra: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, format!("{BASE}{extra}")).unwrap();
    (dir, cfg)
}

fn taskmod(cmd: &str, cfg: &Path, sets: &[&str]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_taskmod"));
    c.arg(cmd).arg("--config").arg(cfg);
    for s in sets {
        c.arg("--set").arg(s);
    }
    c.output().unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn invalid_correlation_is_a_config_error() {
    let (_dir, cfg) = setup(
        r#"
[[data.correlations]]
i = 0
j = 1
rho = 1.5
"#,
    );
    let out = taskmod("generate", &cfg, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("correlation"), "{}", stderr(&out));
}

#[test]
fn indivisible_batch_is_rejected_before_training() {
    let (dir, cfg) = setup("");
    ok(&taskmod("generate", &cfg, &[]));
    let out = taskmod("train", &cfg, &["train.batch_size=21"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("out/train/final.bin").exists());
}

#[test]
fn unknown_key_is_rejected() {
    let (_dir, cfg) = setup("");
    let out = taskmod("generate", &cfg, &["train.learning_rat=0.1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn divergence_exits_with_step() {
    let (_dir, cfg) = setup("");
    ok(&taskmod("generate", &cfg, &[]));
    let out = taskmod("train", &cfg, &["train.learning_rate=1e300", "train.alpha=1e300"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("step"), "{}", stderr(&out));
}

#[test]
fn train_without_dataset_fails() {
    let (_dir, cfg) = setup("");
    let out = taskmod("train", &cfg, &[]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("dataset"), "{}", stderr(&out));
}

#[test]
fn zero_learning_rate_keeps_initial_weights() {
    let (dir, cfg) = setup("");
    ok(&taskmod("generate", &cfg, &[]));
    ok(&taskmod("train", &cfg, &["train.learning_rate=0.0"]));
    let first = std::fs::read(dir.path().join("out/train/checkpoint_epoch0000.bin")).unwrap();
    let last = std::fs::read(dir.path().join("out/train/final.bin")).unwrap();
    assert_eq!(first, last);
}

#[test]
fn disabled_ucr_writes_no_ucr_file() {
    let (dir, cfg) = setup("");
    ok(&taskmod("generate", &cfg, &[]));
    ok(&taskmod("train", &cfg, &["train.ucr_enabled=false"]));
    assert!(dir.path().join("out/train/metrics.csv").exists());
    assert!(!dir.path().join("out/train/ucr.csv").exists());
}

#[test]
fn outputs_carry_the_config_hash() {
    let (dir, cfg) = setup("");
    ok(&taskmod("generate", &cfg, &[]));
    ok(&taskmod("train", &cfg, &[]));
    ok(&taskmod("eval", &cfg, &[]));
    ok(&taskmod("ucr-report", &cfg, &[]));
    let metrics = std::fs::read_to_string(dir.path().join("out/train/metrics.csv")).unwrap();
    let report = std::fs::read_to_string(dir.path().join("out/eval/report.csv")).unwrap();
    let hash = metrics.lines().next().unwrap();
    assert!(hash.starts_with("# config_hash="));
    assert_eq!(report.lines().next().unwrap(), hash);
    assert_eq!(
        report.lines().nth(1).unwrap(),
        "variant,task,accuracy,shared_params,task_params"
    );
    assert_eq!(report.lines().count(), 4);
}

#[test]
fn compare_reports_every_variant() {
    let (dir, cfg) = setup(
        r#"
[compare]
variants = ["modulated", "fully-shared", "independent", "ib-4"]
"#,
    );
    ok(&taskmod("generate", &cfg, &["train.epochs=1"]));
    ok(&taskmod("compare", &cfg, &["train.epochs=1"]));
    let summary = std::fs::read_to_string(dir.path().join("out/compare/summary.txt")).unwrap();
    for v in ["modulated", "fully-shared", "independent", "independent-branch(4)"] {
        assert!(summary.contains(v), "{summary}");
    }
    let report = std::fs::read_to_string(dir.path().join("out/compare/report.csv")).unwrap();
    assert_eq!(report.lines().count(), 2 + 4 * 2);
}
