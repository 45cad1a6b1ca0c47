//! End-to-end smoke tests for the `poselift` binary: every subcommand runs
//! against real files in a temp directory, and exit codes follow the
//! documented contract (0 success, 1 runtime failure, 2 usage error).

use std::path::Path;
use std::process::{Command, Output};

use poselift::data::load_dataset;

const BIN: &str = env!("CARGO_BIN_EXE_poselift");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn poselift")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no exit code")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth_file(dir: &Path, name: &str, count: usize, seed: u64) -> std::path::PathBuf {
    let out = dir.join(name);
    let status = run(&[
        "synth",
        "--count",
        &count.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        path_str(&out),
    ]);
    assert_eq!(code(&status), 0, "synth failed: {}", String::from_utf8_lossy(&status.stderr));
    out
}

#[test]
fn synth_is_deterministic_and_honors_count_zero() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth_file(dir.path(), "a.jsonl", 120, 9);
    let b = synth_file(dir.path(), "b.jsonl", 120, 9);
    let c = synth_file(dir.path(), "c.jsonl", 120, 10);
    let bytes_a = std::fs::read(&a).unwrap();
    assert!(!bytes_a.is_empty());
    assert_eq!(bytes_a, std::fs::read(&b).unwrap(), "same seed must give identical files");
    assert_ne!(bytes_a, std::fs::read(&c).unwrap(), "different seed must change the data");

    let empty = dir.path().join("empty.jsonl");
    let out = run(&["synth", "--count", "0", "--out", path_str(&empty)]);
    assert_eq!(code(&out), 0);
    assert_eq!(std::fs::read(&empty).unwrap().len(), 0);

    let stripped = dir.path().join("unlabeled.jsonl");
    let out = run(&[
        "synth",
        "--count",
        "10",
        "--seed",
        "9",
        "--out",
        path_str(&stripped),
        "--strip-labels",
    ]);
    assert_eq!(code(&out), 0);
    let samples = load_dataset::<f64>(&stripped, 0).unwrap();
    assert_eq!(samples.len(), 10);
    assert!(samples.iter().all(|s| s.pose3d.is_none()));
}

#[test]
fn train_eval_predict_and_export_features_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let train = synth_file(dir.path(), "train.jsonl", 150, 1);
    let val = synth_file(dir.path(), "val.jsonl", 40, 2);

    let ckpt = dir.path().join("model.ckpt");
    let log = dir.path().join("loss.csv");
    let out = run(&[
        "train",
        "--labeled",
        path_str(&train),
        "--val",
        path_str(&val),
        "--out-checkpoint",
        path_str(&ckpt),
        "--log",
        path_str(&log),
        "--epochs",
        "2",
        "--width",
        "16",
        "--batch-size",
        "32",
        "--seed",
        "3",
    ]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(code(&out), 0, "train failed: {stderr}");
    // The resolved configuration (loss weights included) is echoed to stderr.
    assert!(stderr.contains("\"weights\""), "missing config echo: {stderr}");
    assert!(std::fs::metadata(&ckpt).unwrap().len() > 0);
    let log_text = std::fs::read_to_string(&log).unwrap();
    assert!(
        log_text.starts_with("step, est, perc_l, rec, disc_ul, perc_ul, total, disc_loss"),
        "unexpected log header: {}",
        log_text.lines().next().unwrap_or("")
    );
    assert!(log_text.lines().count() > 1, "log has no data rows");

    let report = dir.path().join("report.json");
    let out = run(&[
        "eval",
        "--checkpoint",
        path_str(&ckpt),
        "--data",
        path_str(&val),
        "--per-action",
        "--out",
        path_str(&report),
    ]);
    assert_eq!(code(&out), 0, "eval failed: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("overall"), "per-action table missing: {stdout}");
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(parsed["n_samples"], 40);
    assert!(parsed["mpjpe_p1"].as_f64().unwrap().is_finite());
    assert!(parsed["mpjpe_p2"].as_f64().unwrap() <= parsed["mpjpe_p1"].as_f64().unwrap() + 1e-9);

    let preds = dir.path().join("preds.jsonl");
    let out = run(&[
        "predict",
        "--checkpoint",
        path_str(&ckpt),
        "--data",
        path_str(&val),
        "--out",
        path_str(&preds),
    ]);
    assert_eq!(code(&out), 0, "predict failed: {}", String::from_utf8_lossy(&out.stderr));
    let predicted = load_dataset::<f64>(&preds, 0).unwrap();
    let originals = load_dataset::<f64>(&val, 0).unwrap();
    assert_eq!(predicted.len(), originals.len());
    for (p, o) in predicted.iter().zip(&originals) {
        assert_eq!(p.action, o.action, "sample order must be preserved");
        assert_eq!(p.pose2d, o.pose2d);
        let pose = p.pose3d.as_ref().expect("prediction missing 3D pose");
        assert_eq!(pose[0], [0.0, 0.0, 0.0], "predictions must be root-centered");
    }

    let features = dir.path().join("features.csv");
    let out = run(&[
        "export-features",
        "--checkpoint",
        path_str(&ckpt),
        "--data",
        path_str(&val),
        "--out",
        path_str(&features),
        "--include-reencoded",
    ]);
    assert_eq!(code(&out), 0, "export failed: {}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(&features).unwrap();
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("sample,source,f0"));
    assert_eq!(header.split(',').count(), 2 + 16, "one column per latent dimension");
    assert_eq!(lines.count(), 3 * 40, "three feature rows per sample");
}

#[test]
fn usage_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let labeled = synth_file(dir.path(), "l.jsonl", 30, 4);
    let val = synth_file(dir.path(), "v.jsonl", 10, 5);

    // Semi-supervised training without an unlabeled set is a usage error.
    let out = run(&[
        "train",
        "--mode",
        "semi",
        "--labeled",
        path_str(&labeled),
        "--val",
        path_str(&val),
        "--out-checkpoint",
        path_str(&dir.path().join("x.ckpt")),
        "--epochs",
        "1",
        "--width",
        "16",
    ]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));

    // Unknown subcommands are rejected by the parser with the same code.
    let out = run(&["frobnicate"]);
    assert_eq!(code(&out), 2);

    // A missing input file is a runtime failure, not a usage error.
    let out = run(&[
        "eval",
        "--checkpoint",
        path_str(&dir.path().join("nope.ckpt")),
        "--data",
        path_str(&val),
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn selfcheck_exit_code_tracks_the_battery_outcome() {
    let out = run(&["selfcheck"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("all checks passed"), "{stdout}");

    let out = Command::new(BIN)
        .arg("selfcheck")
        .env("POSELIFT_SELFCHECK_FAIL", "1")
        .output()
        .expect("spawn poselift");
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stdout).contains("SOME CHECKS FAILED"));
}
