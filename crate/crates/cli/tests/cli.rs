use std::path::Path;
use std::process::{Command, Output};

fn ppg_rr(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ppg-rr"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn synth_data(dir: &Path) {
    ok(&ppg_rr(&["--seed", "5", "--out-dir", "data", "synth", "--subjects", "3", "--segments", "6"], dir));
}

const FAST: &str = "[model]\nfamily = \"GRNN\"\n[model.hyperparams]\nspread = 1.5\n[selection]\nmethod = \"RReliefF\"\nk = 12\n";

#[test]
fn synth_then_run_writes_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth_data(dir);
    assert!(dir.join("data/synth002.csv").exists());
    let stdout = ok(&ppg_rr(&["--out-dir", "out", "run", "data"], dir));
    assert!(stdout.contains("pooled"), "{stdout}");
    for f in ["metrics.json", "manifest.json", "regression.csv", "bland_altman.csv", "folds.csv", "config.toml"] {
        assert!(dir.join("out").join(f).exists(), "{f}");
    }
    let metrics: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("out/metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["n"], 18);
    assert_eq!(metrics["per_fold"].as_array().unwrap().len(), 5);
}

#[test]
fn nyquist_violation_fails_in_filter_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth_data(dir);
    std::fs::write(dir.join("bad.toml"), "[filter]\ncutoff_hz = 300.0\n").unwrap();
    let out = ppg_rr(&["--config", "bad.toml", "--out-dir", "out", "run", "data"], dir);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("filter") && err.contains("cutoff ≥ Nyquist"), "{err}");
}

#[test]
fn identical_runs_give_identical_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth_data(dir);
    std::fs::write(dir.join("fast.toml"), FAST).unwrap();
    for out in ["a", "b"] {
        ok(&ppg_rr(&["--config", "fast.toml", "--seed", "9", "--out-dir", out, "run", "data"], dir));
    }
    let a = std::fs::read(dir.join("a/metrics.json")).unwrap();
    let b = std::fs::read(dir.join("b/metrics.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn stagewise_commands_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth_data(dir);
    std::fs::write(dir.join("fast.toml"), FAST).unwrap();
    let cfg = ["--config", "fast.toml"];

    let stdout = ok(&ppg_rr(&[&cfg[..], &["--out-dir", "ing", "ingest", "data"]].concat(), dir));
    assert!(stdout.contains("synth001"), "{stdout}");
    let ingest: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("ing/ingest.json")).unwrap()).unwrap();
    assert_eq!(ingest["segments"], 18);

    ok(&ppg_rr(&[&cfg[..], &["--out-dir", "ex", "extract", "data", "--dump-fiducials"]].concat(), dir));
    let fid = std::fs::read_to_string(dir.join("ex/fiducials.csv")).unwrap();
    assert!(fid.lines().next().unwrap().starts_with("segment,beat,"));
    assert!(fid.lines().count() > 18 * 20);
    let header = std::fs::read_to_string(dir.join("ex/features.csv")).unwrap();
    assert_eq!(header.lines().next().unwrap().split(',').count(), 107 + 2);

    ok(&ppg_rr(&[&cfg[..], &["--out-dir", "sel", "select", "--features", "ex/features.csv", "--k", "4"]].concat(), dir));
    let sel: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("sel/select.json")).unwrap()).unwrap();
    assert_eq!(sel["selected"].as_array().unwrap().len(), 4);
    assert_eq!(sel["ranking"]["method"], "RReliefF");

    ok(&ppg_rr(&[&cfg[..], &["--out-dir", "tr", "train", "--features", "ex/features.csv"]].concat(), dir));
    let train: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("tr/train.json")).unwrap()).unwrap();
    assert_eq!(train["features"].as_array().unwrap().len(), 12);
    assert_eq!(train["spec"]["family"], "GRNN");

    let stdout = ok(&ppg_rr(
        &[&cfg[..], &["--out-dir", "ev", "evaluate", "--features", "ex/features.csv", "--trained", "tr"]].concat(),
        dir,
    ));
    assert!(stdout.contains("scored"), "{stdout}");
    let scored: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("ev/metrics.json")).unwrap()).unwrap();
    assert_eq!(scored["mae"], train["training_metrics"]["mae"]);

    ok(&ppg_rr(&[&cfg[..], &["--out-dir", "tu", "tune", "--features", "ex/features.csv", "--iterations", "6"]].concat(), dir));
    let tune: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("tu/tune.json")).unwrap()).unwrap();
    assert_eq!(tune["history"].as_array().unwrap().len(), 6);
    assert_eq!(tune["spec"]["family"], "GPR");
}

#[test]
fn unknown_method_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ppg_rr(&["select", "--method", "astrology"], tmp.path());
    assert!(!out.status.success());
}
