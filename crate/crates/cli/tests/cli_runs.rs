//! End-to-end runs of the `fimguard` binary: exit codes, written outputs,
//! and rerun determinism, all on a tiny blob problem so every test is fast.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fimguard"))
}

/// A small, well-separated MLP-on-blobs run; trains to full accuracy in a
/// fraction of a second.
fn blob_sets(extra: &[&str]) -> Vec<String> {
    let mut sets = vec![
        "data.source=blobs".to_string(),
        "data.train_count=60".to_string(),
        "data.test_count=12".to_string(),
        "data.classes=3".to_string(),
        "data.dim=8".to_string(),
        "data.seed=11".to_string(),
        "model.arch=mlp".to_string(),
        "model.hidden=[10]".to_string(),
        "train.epochs=6".to_string(),
        "train.lr=0.1".to_string(),
        "train.momentum=0.5".to_string(),
        "train.batch_size=16".to_string(),
    ];
    sets.extend(extra.iter().map(|s| s.to_string()));
    sets
}

fn run(args: &[&str], sets: &[String]) -> Output {
    let mut cmd = bin();
    cmd.args(args);
    for s in sets {
        cmd.arg("--set").arg(s);
    }
    cmd.output().expect("binary spawns")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn train_into(dir: &Path) -> PathBuf {
    let out = run(&["train", "--out", dir.to_str().unwrap()], &blob_sets(&[]));
    assert_eq!(code(&out), 0, "train failed: {}", stderr_of(&out));
    dir.join("model.ckpt")
}

#[test]
fn help_lists_every_subcommand() {
    let out = bin().arg("--help").output().unwrap();
    assert_eq!(code(&out), 0);
    let text = stdout_of(&out);
    for sub in ["train", "attack", "eval", "verify"] {
        assert!(text.contains(sub), "--help misses {sub}: {text}");
    }
}

#[test]
fn train_writes_checkpoint_log_and_resolved_config() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let out = run(&["train", "--out", dir.to_str().unwrap()], &blob_sets(&[]));
    assert_eq!(code(&out), 0, "stderr: {}", stderr_of(&out));

    for name in ["model.ckpt", "trainlog.csv", "resolved-config.json"] {
        assert!(dir.join(name).is_file(), "missing {name}");
    }
    // The resolved config reflects the overrides, not the defaults.
    let text = std::fs::read_to_string(dir.join("resolved-config.json")).unwrap();
    let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(doc["data"]["source"], "blobs");
    assert_eq!(doc["train"]["lr"], 0.1);
    assert_eq!(doc["model"]["hidden"], serde_json::json!([10]));
    assert_eq!(doc["output"]["dir"], dir.to_str().unwrap());
    // Final line reports the weights hash prefix.
    assert!(stdout_of(&out).contains("weights "), "stdout: {}", stdout_of(&out));
}

#[test]
fn retraining_into_the_same_dir_reproduces_every_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let args = ["train", "--out", dir.to_str().unwrap()];

    let first = run(&args, &blob_sets(&[]));
    assert_eq!(code(&first), 0);
    let ckpt_a = std::fs::read(dir.join("model.ckpt")).unwrap();
    let log_a = std::fs::read(dir.join("trainlog.csv")).unwrap();

    let second = run(&args, &blob_sets(&[]));
    assert_eq!(code(&second), 0);
    assert_eq!(ckpt_a, std::fs::read(dir.join("model.ckpt")).unwrap());
    assert_eq!(log_a, std::fs::read(dir.join("trainlog.csv")).unwrap());
}

#[test]
fn attack_writes_per_sample_rows_and_verify_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = train_into(&tmp.path().join("train"));

    let adir = tmp.path().join("attack");
    let out = run(
        &[
            "attack",
            "--ckpt",
            ckpt.to_str().unwrap(),
            "--attack",
            "fgm",
            "--eps",
            "0.5",
            "--out",
            adir.to_str().unwrap(),
        ],
        &blob_sets(&[]),
    );
    assert_eq!(code(&out), 0, "stderr: {}", stderr_of(&out));
    assert!(stdout_of(&out).contains("fooling ratio"));
    let rows = std::fs::read_to_string(adir.join("per_sample.csv")).unwrap();
    assert!(rows.lines().count() > 1, "per_sample.csv has no data rows:\n{rows}");

    let verify = bin().args(["verify", "--ckpt", ckpt.to_str().unwrap()]).output().unwrap();
    assert_eq!(code(&verify), 0, "verify: {}", stdout_of(&verify));
    assert!(stdout_of(&verify).contains("PASS trace-identity"));
}

#[test]
fn eval_produces_a_report_with_transfer_for_two_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let base = train_into(&tmp.path().join("base"));
    // Second model: different init, same data.
    let ddir = tmp.path().join("other");
    let out = run(
        &["train", "--out", ddir.to_str().unwrap()],
        &blob_sets(&["model.seed=2", "train.seed=2"]),
    );
    assert_eq!(code(&out), 0, "stderr: {}", stderr_of(&out));

    let edir = tmp.path().join("eval");
    let out = run(
        &[
            "eval",
            "--ckpt",
            base.to_str().unwrap(),
            "--ckpt",
            ddir.join("model.ckpt").to_str().unwrap(),
            "--out",
            edir.to_str().unwrap(),
        ],
        &blob_sets(&[
            "attacks=[{\"name\":\"fgm\",\"epsilon\":0.5}]",
            "eval.samples=12",
            "eval.distance_samples=6",
            "eval.transfer_samples=6",
            "eval.eps_grid=[0.25,0.5]",
            "eval.eps_max=4.0",
        ]),
    );
    assert_eq!(code(&out), 0, "stderr: {}", stderr_of(&out));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(edir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["metadata"]["models"].as_array().unwrap().len(), 2);
    assert!(!report["curves"].as_array().unwrap().is_empty());
    assert!(!report["distances"].as_array().unwrap().is_empty());
    // Both directions of the pair.
    assert_eq!(report["transfers"].as_array().unwrap().len(), 2);
    for name in ["per_sample.csv", "curves.csv", "distances.csv", "transfer.csv"] {
        assert!(edir.join(name).is_file(), "missing {name}");
    }
}

#[test]
fn transfer_eval_rejects_a_single_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = train_into(&tmp.path().join("train"));
    let out = run(
        &[
            "eval",
            "--ckpt",
            ckpt.to_str().unwrap(),
            "--out",
            tmp.path().join("eval").to_str().unwrap(),
        ],
        &blob_sets(&["eval.modes=[\"transfer\"]"]),
    );
    assert_eq!(code(&out), 1, "stderr: {}", stderr_of(&out));
    assert!(stderr_of(&out).contains("two checkpoints"));
}

#[test]
fn unknown_attack_is_rejected_with_the_roster() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "attack",
            "--ckpt",
            tmp.path().join("nope.ckpt").to_str().unwrap(),
            "--attack",
            "gradient_zap",
            "--out",
            tmp.path().join("a").to_str().unwrap(),
        ],
        &blob_sets(&[]),
    );
    assert_eq!(code(&out), 1);
    let err = stderr_of(&out);
    assert!(err.contains("unknown attack"), "stderr: {err}");
    for name in ["ossa", "deepfool", "cw_l2"] {
        assert!(err.contains(name), "roster misses {name}: {err}");
    }
}

#[test]
fn eps_flag_matches_the_attack_family() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = train_into(&tmp.path().join("train"));
    let adir = tmp.path().join("a");

    // Budgeted attack not present in the config: --eps is mandatory.
    let out = run(
        &[
            "attack",
            "--ckpt",
            ckpt.to_str().unwrap(),
            "--attack",
            "fgm",
            "--out",
            adir.to_str().unwrap(),
        ],
        &blob_sets(&[]),
    );
    assert_eq!(code(&out), 1);
    assert!(stderr_of(&out).contains("--eps"), "stderr: {}", stderr_of(&out));

    // Distance minimizers refuse a budget.
    let out = run(
        &[
            "attack",
            "--ckpt",
            ckpt.to_str().unwrap(),
            "--attack",
            "deepfool",
            "--eps",
            "0.5",
            "--out",
            adir.to_str().unwrap(),
        ],
        &blob_sets(&[]),
    );
    assert_eq!(code(&out), 1);
    assert!(stderr_of(&out).contains("no --eps"), "stderr: {}", stderr_of(&out));
}

#[test]
fn invalid_mu_fails_before_anything_is_written() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let out = run(
        &["train", "--out", dir.to_str().unwrap()],
        &blob_sets(&["train.regime=fim", "train.mu=-0.5"]),
    );
    assert_eq!(code(&out), 1, "stderr: {}", stderr_of(&out));
    assert!(!dir.exists(), "failed run left outputs behind");
}

#[test]
fn missing_checkpoint_is_a_file_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "attack",
            "--ckpt",
            tmp.path().join("absent.ckpt").to_str().unwrap(),
            "--attack",
            "fgm",
            "--eps",
            "0.5",
            "--out",
            tmp.path().join("a").to_str().unwrap(),
        ],
        &blob_sets(&[]),
    );
    assert_eq!(code(&out), 2, "stderr: {}", stderr_of(&out));
}

#[test]
fn malformed_set_spec_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(
        &["train", "--out", tmp.path().join("r").to_str().unwrap()],
        &["no-equals-here".to_string()],
    );
    assert_eq!(code(&out), 1);
    assert!(stderr_of(&out).contains("key=value"), "stderr: {}", stderr_of(&out));
}
