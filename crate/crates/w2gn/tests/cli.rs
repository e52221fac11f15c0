//! End-to-end checks of the command-line binary: artifact layout, exit
//! codes, and rerun determinism.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_w2gn"))
}

fn tiny_config(out_dir: &Path, seed: u64) -> String {
    format!(
        r#"
method = "w2gn"
out_dir = "{}"
log_interval = 10

[source]
kind = "standard-gaussian"

[target]
kind = "gaussian"
mean = [1.0, -1.0]
cov = [[1.0, 0.0], [0.0, 1.0]]

[train]
lambda_y = 1.0
batch_size = 64
iters = 30
pretrain_iters = 50
seed = {seed}

[train.spec]
input_dim = 2
rank = 2
widths = [16, 8]
"#,
        out_dir.display()
    )
}

fn run_train(cfg_path: &Path) {
    let status = bin()
        .args(["train", "--config"])
        .arg(cfg_path)
        .env("W2GN_LOG", "quiet")
        .status()
        .unwrap();
    assert!(status.success());
}

#[test]
fn train_writes_the_full_artifact_set() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, tiny_config(&out, 3)).unwrap();
    run_train(&cfg);
    for name in [
        "log.jsonl",
        "summary.json",
        "checkpoint.ckpt",
        "source.csv",
        "target.csv",
        "pushed.csv",
        "inverse.csv",
    ] {
        assert!(out.join(name).exists(), "missing {name}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["format_version"], 1);
    assert_eq!(summary["config"]["train"]["seed"], 3);
    assert!(summary["corr_reference"].is_f64());
    let log = std::fs::read_to_string(out.join("log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3); // iters 10, 20, 30
    for line in log.lines() {
        let rec: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(rec["loss"].is_f64());
    }
}

#[test]
fn reruns_with_the_same_seed_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (out_a, out_b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&out_a, &out_b] {
        let cfg = dir.path().join("exp.toml");
        std::fs::write(&cfg, tiny_config(out, 11)).unwrap();
        run_train(&cfg);
    }
    // Checkpoints are byte-identical; logs match once wall time is dropped.
    assert_eq!(
        std::fs::read(out_a.join("checkpoint.ckpt")).unwrap(),
        std::fs::read(out_b.join("checkpoint.ckpt")).unwrap()
    );
    let strip = |path: &Path| -> Vec<serde_json::Value> {
        std::fs::read_to_string(path)
            .unwrap()
            .lines()
            .map(|l| {
                let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
                v.as_object_mut().unwrap().remove("wall_ms");
                v
            })
            .collect()
    };
    assert_eq!(strip(&out_a.join("log.jsonl")), strip(&out_b.join("log.jsonl")));
}

#[test]
fn periodic_checkpoints_are_written_at_log_points() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = dir.path().join("exp.toml");
    let text = tiny_config(&out, 3)
        .replace("log_interval = 10", "log_interval = 10\ncheckpoint_interval = 10");
    std::fs::write(&cfg, text).unwrap();
    run_train(&cfg);
    for it in [10, 20, 30] {
        assert!(out.join(format!("ckpt-{it:06}.ckpt")).exists(), "missing snapshot {it}");
    }
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let (out_a, out_b) = (dir.path().join("a"), dir.path().join("b"));
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, tiny_config(&out_a, 3)).unwrap();
    run_train(&cfg);
    let status = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .args(["--seed", "99", "--out"])
        .arg(&out_b)
        .env("W2GN_LOG", "quiet")
        .status()
        .unwrap();
    assert!(status.success());
    assert_ne!(
        std::fs::read(out_a.join("checkpoint.ckpt")).unwrap(),
        std::fs::read(out_b.join("checkpoint.ckpt")).unwrap()
    );
}

#[test]
fn missing_required_field_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    let text = tiny_config(&dir.path().join("out"), 3).replace("lambda_y = 1.0\n", "");
    std::fs::write(&cfg, text).unwrap();
    let output = bin().args(["train", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("lambda_y"), "{stderr}");
}

#[test]
fn unknown_keys_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    let text = tiny_config(&dir.path().join("out"), 3).replace("iters = 30", "iters = 30\nlamda = 2.0");
    std::fs::write(&cfg, text).unwrap();
    let output = bin().args(["train", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("lamda"));
}

#[test]
fn missing_config_file_exits_3() {
    let output = bin()
        .args(["train", "--config", "/definitely/not/here.toml"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(3));
}

#[test]
fn corrupt_checkpoint_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("bad.ckpt");
    std::fs::write(&ckpt, b"not a checkpoint").unwrap();
    let output = bin().arg("eval").arg(&ckpt).output().unwrap();
    assert_eq!(output.status.code(), Some(3));
}

#[test]
fn truncated_checkpoint_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, tiny_config(&out, 3)).unwrap();
    run_train(&cfg);
    let bytes = std::fs::read(out.join("checkpoint.ckpt")).unwrap();
    let cut = dir.path().join("cut.ckpt");
    std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
    let output = bin().arg("eval").arg(&cut).output().unwrap();
    assert_eq!(output.status.code(), Some(3));
}

#[test]
fn eval_prints_checkpoint_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, tiny_config(&out, 3)).unwrap();
    run_train(&cfg);
    let output = bin()
        .arg("eval")
        .arg(out.join("checkpoint.ckpt"))
        .args(["--config"])
        .arg(&cfg)
        .env("W2GN_LOG", "quiet")
        .output()
        .unwrap();
    assert!(output.status.success());
    let report: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    for key in [
        "convexity_theta",
        "monotonicity_violation_rate",
        "r_y",
        "r_x",
        "ed_forward",
        "eps_hat",
    ] {
        assert!(!report[key].is_null(), "missing {key}");
    }
    assert_eq!(report["iteration"], 30);
}

#[test]
fn benchmark_needs_at_least_two_methods() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bench.toml");
    let text = tiny_config(&dir.path().join("out"), 3)
        .replace("method = \"w2gn\"", "methods = [\"w2gn\"]");
    std::fs::write(&cfg, text).unwrap();
    let output = bin().args(["benchmark", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("two methods"));
}

#[test]
fn benchmark_merges_methods_into_one_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = dir.path().join("bench.toml");
    let text = tiny_config(&out, 3)
        .replace("method = \"w2gn\"", "methods = [\"w2gn\", \"minimax\"]");
    std::fs::write(&cfg, text).unwrap();
    let status = bin()
        .args(["benchmark", "--config"])
        .arg(&cfg)
        .env("W2GN_LOG", "quiet")
        .status()
        .unwrap();
    assert!(status.success());
    let csv = std::fs::read_to_string(out.join("benchmark.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "method,iteration,wall_ms,ed_forward");
    assert!(lines.iter().any(|l| l.starts_with("w2gn,")));
    assert!(lines.iter().any(|l| l.starts_with("minimax,")));
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out.join("benchmark-summary.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(summary.as_array().unwrap().len(), 2);
}

#[test]
fn no_config_and_no_preset_exits_2() {
    let output = bin().arg("train").output().unwrap();
    assert_eq!(output.status.code(), Some(2));
}
