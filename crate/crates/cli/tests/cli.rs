use std::path::Path;
use std::process::{Command, Output};

fn ssr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssr")).args(args).output().expect("binary runs")
}

fn synth(dir: &Path) {
    let out = ssr(&["synth", "--users", "200", "--items", "100", "--blocks", "4", "--seed", "42", "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_writes_three_data_files_and_block_map() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    for f in ["interactions.tsv", "img.ssrf", "txt.ssrf", "blocks.tsv"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let blocks = std::fs::read_to_string(dir.path().join("blocks.tsv")).unwrap();
    assert_eq!(blocks.lines().count(), 1 + 200 + 100);

    let again = tempfile::tempdir().unwrap();
    synth(again.path());
    for f in ["interactions.tsv", "img.ssrf", "txt.ssrf", "blocks.tsv"] {
        assert_eq!(std::fs::read(dir.path().join(f)).unwrap(), std::fs::read(again.path().join(f)).unwrap());
    }
}

#[test]
fn train_then_evaluate_reproduces_test_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("data");
    synth(&d);
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "dim = 8\nbands = 2\nrank = 2\ngate_hidden = 4\nmax_epochs = 2\n").unwrap();
    let run = dir.path().join("run");
    let p = |f: &str| d.join(f).to_str().unwrap().to_string();
    let out = ssr(&[
        "train",
        "--interactions", &p("interactions.tsv"),
        "--img-features", &p("img.ssrf"),
        "--txt-features", &p("txt.ssrf"),
        "--config", cfg.to_str().unwrap(),
        "--out", run.to_str().unwrap(),
        "--quiet",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["epochs_run"], 2);
    let log = std::fs::read_to_string(run.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);

    let ckpt = run.join("checkpoint.ssrc");
    let out = ssr(&["evaluate", "--checkpoint", ckpt.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let eval: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(eval, metrics["test"]);

    let out = ssr(&["evaluate", "--checkpoint", ckpt.to_str().unwrap(), "--cold-start"]);
    let cold: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cold, metrics["test_cold_start"]);

    let diag = dir.path().join("diag");
    let out = ssr(&["diagnose", "--checkpoint", ckpt.to_str().unwrap(), "--out", diag.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["band_energy.csv", "gate_weights.csv", "center_distances.csv"] {
        assert!(diag.join(f).is_file(), "{f}");
    }
}

#[test]
fn missing_required_flag_is_a_usage_error() {
    assert_eq!(ssr(&["synth"]).status.code(), Some(1));
    assert_eq!(ssr(&["evaluate"]).status.code(), Some(1));
    assert_eq!(ssr(&["frobnicate"]).status.code(), Some(1));
    let out = ssr(&["train", "--out", "unused"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--interactions"));
    assert_eq!(ssr(&["--help"]).status.code(), Some(0));
}

#[test]
fn bad_data_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.tsv");
    std::fs::write(&bad, "0 1 2\n0 1\n").unwrap();
    let out = ssr(&["train", "--interactions", bad.to_str().unwrap(), "--out", dir.path().join("r").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("byte offset 6"));

    let feats = dir.path().join("img.ssrf");
    std::fs::write(&feats, b"SSRF\x02\x00\x00\x00\x02\x00\x00\x00").unwrap();
    std::fs::write(&bad, "0 1 2\n1 0 3\n").unwrap();
    let out = ssr(&[
        "train",
        "--interactions", bad.to_str().unwrap(),
        "--img-features", feats.to_str().unwrap(),
        "--out", dir.path().join("r").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_passes_and_reports() {
    let out = ssr(&["gradcheck", "--coords", "20"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["pass"], true);
}
