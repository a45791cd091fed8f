use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn symframe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_symframe")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn verify_model_rejects_broken_time_reversal() {
    let ok = symframe(&["verify-model", "--model", "haldane", "--grid-n", "8"]);
    assert!(ok.status.success(), "{}", stderr(&ok));
    let bad = symframe(&["verify-model", "--model", "haldane", "--param", "phi=1.5707963267948966", "--grid-n", "8"]);
    assert_eq!(bad.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_slice(&bad.stdout).unwrap();
    assert_eq!(report["passed"], false);
    assert!(report["p3_time_reversal"].as_f64().unwrap() > 0.1);
}

#[test]
fn construct_writes_artifacts_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = symframe(&["construct", "--model", "haldane", "--grid-n", "32", "--out", out.to_str().unwrap(), "--threads", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["input.blf", "continuous.blf", "smoothed.blf", "manifest.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    for key in ["projector", "gram", "translation", "time_reversal"] {
        assert!(manifest["smoothed"][key].as_f64().unwrap() <= 1e-8, "{key}");
    }
}

fn artifacts(dir: &Path) -> Vec<Vec<u8>> {
    ["input.blf", "continuous.blf", "smoothed.blf", "wannier.wan"].iter().map(|f| fs::read(dir.join(f)).unwrap()).collect()
}

#[test]
fn wannierize_is_reproducible_and_reportable() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = symframe(&["wannierize", "--model", "random-trs", "--param", "seed=2", "--grid-n", "8", "--seed", "4", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(artifacts(&a), artifacts(&b));
    assert!(a.join("wannier.csv").exists() && a.join("localization.json").exists());
    let r = symframe(&["report", "--out", a.to_str().unwrap()]);
    assert!(r.status.success());
    let text = String::from_utf8_lossy(&r.stdout);
    assert!(text.contains("boundary degrees") && text.contains("decay rate"));
}

#[test]
fn report_on_empty_directory_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = symframe(&["report", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no readable manifest.json"));
}

#[test]
fn errors_carry_machine_readable_codes() {
    let o = symframe(&["construct", "--model", "haldane", "--grid-n", "6", "--param", "bogus=1"]);
    assert_eq!(o.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_str(stderr(&o).trim()).unwrap();
    assert_eq!(err["error"], "InvalidConfig");
    assert_eq!(err["stage"], "model");

    let gapless = symframe(&["construct", "--model", "haldane", "--param", "M=0", "--grid-n", "8"]);
    assert_eq!(gapless.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_str(stderr(&gapless).lines().last().unwrap()).unwrap();
    assert!(err["error"] == "AssumptionsFailed" || err["error"] == "GapClosed", "{err}");
}
