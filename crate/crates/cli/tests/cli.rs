use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_ftncfm");

const TINY: &str = r#"
seeds = [3]

[dataset]
n_samples = 60
test_size = 10
eval_size = 20

[guide]
steps = 200

[distill]
steps = 10
n_frequencies = 8

[downstream]
steps = 100
"#;

fn ftncfm(config: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn setup() -> (tempfile::TempDir, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("tiny.toml");
    std::fs::write(&config, TINY).unwrap();
    (dir, config)
}

#[test]
fn step_commands_write_named_artifacts() {
    let (dir, config) = setup();
    let out = dir.path().join("run");
    for args in [
        &["generate"][..],
        &["assess"],
        &["distill"],
        &["train", "--method", "random-coreset"],
        &["evaluate", "--method", "random-coreset"],
        &["project"],
    ] {
        let o = ftncfm(&config, &out, args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    for name in [
        "config.toml",
        "dataset.jsonl",
        "test.jsonl",
        "eval.jsonl",
        "guide.ckpt",
        "influence.csv",
        "coreset.jsonl",
        "coreset.jsonl.tensors",
        "discrepancy.csv",
        "policy_random-coreset.ckpt",
        "metrics_random-coreset.json",
        "projection.csv",
    ] {
        assert!(out.join(name).is_file(), "missing {name}");
    }
    let projection = std::fs::read_to_string(out.join("projection.csv")).unwrap();
    assert_eq!(projection.lines().next(), Some("x,y,weight,source"));
    assert_eq!(projection.lines().count(), 1 + 60 + 3);
}

#[test]
fn unknown_config_key_exits_with_config_code() {
    let (dir, _) = setup();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[distill]\nwarp = 9\n").unwrap();
    let o = ftncfm(&bad, &dir.path().join("x"), &["generate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_values_exit_with_config_code() {
    let (dir, _) = setup();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[distill]\neta = 1.5\n").unwrap();
    assert_eq!(ftncfm(&bad, &dir.path().join("x"), &["generate"]).status.code(), Some(2));
    let (_, config) = setup();
    let o = ftncfm(&config, &dir.path().join("x"), &["train", "--method", "nearest-neighbour"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_artifacts_exit_with_io_code() {
    let (dir, config) = setup();
    let o = ftncfm(&config, &dir.path().join("empty"), &["distill"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn corrupt_checkpoint_exits_with_io_code() {
    let (dir, config) = setup();
    let out = dir.path().join("run");
    assert!(ftncfm(&config, &out, &["generate"]).status.success());
    std::fs::write(out.join("guide.ckpt"), b"not a checkpoint").unwrap();
    std::fs::write(out.join("influence.csv"), "sample_id,score_base\n").unwrap();
    assert_eq!(ftncfm(&config, &out, &["distill"]).status.code(), Some(4));
}

#[test]
fn degenerate_weights_exit_with_numeric_code() {
    let (dir, config) = setup();
    let out = dir.path().join("run");
    assert!(ftncfm(&config, &out, &["generate"]).status.success());
    let cfg = dir.path().join("floor.toml");
    std::fs::write(&cfg, format!("{TINY}\n[modulation]\nweight_floor = 1e6\n")).unwrap();
    let o = ftncfm(&cfg, &out, &["assess"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn generate_is_reproducible_across_directories() {
    let (dir, config) = setup();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(ftncfm(&config, &a, &["--seed", "11", "generate"]).status.success());
    assert!(ftncfm(&config, &b, &["--seed", "11", "generate"]).status.success());
    for name in ["dataset.jsonl", "test.jsonl", "eval.jsonl"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
    let c = dir.path().join("c");
    assert!(ftncfm(&config, &c, &["--seed", "12", "generate"]).status.success());
    assert_ne!(
        std::fs::read(a.join("dataset.jsonl")).unwrap(),
        std::fs::read(c.join("dataset.jsonl")).unwrap()
    );
}

#[test]
fn zero_threads_is_a_config_error() {
    let (dir, config) = setup();
    let o = ftncfm(&config, &dir.path().join("x"), &["--threads", "0", "generate"]);
    assert_eq!(o.status.code(), Some(2));
}
