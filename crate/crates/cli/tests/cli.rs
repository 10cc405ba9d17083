use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY_MARKOV: &str = "
delay_max = 3
train_steps = 200
validation_steps = 50
test_steps = 60
train_seq_len = 40
test_seq_len = 10
max_steps_per_sample = 40
validation_cadence = 1
minibatch_size = 5
";

fn dybm(dir: &Path, args: &[&str], config: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dybm"));
    cmd.args(args).arg("--out").arg(dir.join("runs"));
    if let Some(text) = config {
        let path = dir.join("run.cfg");
        fs::write(&path, text).unwrap();
        cmd.arg("--config").arg(path);
    }
    cmd.output().unwrap()
}

fn only_run_dir(dir: &Path) -> PathBuf {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir.join("runs")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs.pop().unwrap()
}

#[test]
fn markov7_writes_the_documented_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dybm(tmp.path(), &["markov7", "--seed", "4"], Some(TINY_MARKOV));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = only_run_dir(tmp.path());
    assert!(run.file_name().unwrap().to_str().unwrap().starts_with("markov7-"));
    for f in ["config.txt", "summary.csv"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    for arm in ["baseline", "pruned"] {
        for f in ["metrics.csv", "best.ckpt", "correlation.csv"] {
            assert!(run.join(arm).join(f).is_file(), "{arm}/{f}");
        }
    }
    let summary = fs::read_to_string(run.join("summary.csv")).unwrap();
    assert!(summary.starts_with("arm,method,p,pearson_r,best_step,epsilon\n"));
    assert_eq!(summary.lines().count(), 3);
    let corr = fs::read_to_string(run.join("pruned/correlation.csv")).unwrap();
    // 60 test steps in sequences of 10
    assert_eq!(corr.lines().count(), 7);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [a.path(), b.path()] {
        assert!(dybm(dir, &["markov7", "--seed", "2"], Some(TINY_MARKOV)).status.success());
    }
    let (ra, rb) = (only_run_dir(a.path()), only_run_dir(b.path()));
    assert_eq!(ra.file_name(), rb.file_name());
    for f in ["summary.csv", "baseline/metrics.csv", "pruned/correlation.csv", "pruned/best.ckpt"] {
        assert_eq!(fs::read(ra.join(f)).unwrap(), fs::read(rb.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn config_file_overrides_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!("{TINY_MARKOV}seed = 11\n");
    assert!(dybm(tmp.path(), &["markov7", "--seed", "3"], Some(&text)).status.success());
    let cfg = fs::read_to_string(only_run_dir(tmp.path()).join("config.txt")).unwrap();
    assert!(cfg.contains("seed = 11\n"), "{cfg}");
}

#[test]
fn unknown_key_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dybm(tmp.path(), &["markov7"], Some("learning_rat = 0.1\n"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rat"));
}

#[test]
fn invalid_value_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dybm(tmp.path(), &["markov7"], Some("p = 1.5\n"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_frames_file_suggests_synthetic_source() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dybm(
        tmp.path(),
        &["video", "--source", "file", "--frames-file", "/nonexistent/frames.bin"],
        None,
    );
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--source synthetic"), "{err}");
    assert!(!tmp.path().join("runs").exists());
}

#[test]
fn sweep_rejects_weight_randomization() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dybm(tmp.path(), &["sweep", "--randomize-weights"], None);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn markov7_only_compares_against_delay_pruning() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dybm(tmp.path(), &["markov7", "--method", "dropout"], None);
    assert_eq!(out.status.code(), Some(2));
}
