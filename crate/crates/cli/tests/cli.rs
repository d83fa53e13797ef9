use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn klr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_klr")).args(args).env_remove("KLR_THREADS").output().unwrap()
}

fn ok_json(args: &[&str]) -> Value {
    let out = klr(args);
    assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 1, "summary must be one line: {stdout}");
    serde_json::from_str(&stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_one() {
    let out = klr(&[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(klr(&["phantom", "generate", "--bogus"]).status.code(), Some(1));
    assert_eq!(klr(&["recon"]).status.code(), Some(1));
    assert_eq!(klr(&["phantom", "generate", "--shape", "64x64", "--output-truth", "x.vol"]).status.code(), Some(1));
    assert_eq!(klr(&["--help"]).status.code(), Some(0));
    assert_eq!(klr(&["--version"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.vol");
    assert_eq!(klr(&["dti", "fit", "--input", s(&missing)]).status.code(), Some(2));
    let junk = dir.path().join("junk.vol");
    std::fs::write(&junk, b"XXXXXX00 not a volume").unwrap();
    std::fs::write(dir.path().join("junk.gtab.json"), b"{}").unwrap();
    let out = klr(&["recon", "cs", "--input", s(&junk), "--mask", s(&junk), "--output", s(&dir.path().join("o.vol"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn thread_setting_is_validated() {
    let out = Command::new(env!("CARGO_BIN_EXE_klr")).args(["dti", "fit", "--input", "x.vol"]).env("KLR_THREADS", "many").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn phantom_then_dti_gives_annulus_fa() {
    let dir = tempfile::tempdir().unwrap();
    let truth = dir.path().join("t.vol");
    let summary = ok_json(&["phantom", "generate", "--shape", "64x64x4x24", "--seed", "1", "--output-truth", s(&truth)]);
    assert_eq!(summary["shape"], "64x64x4x27");
    let fa = dir.path().join("fa.vol");
    let png = dir.path().join("png");
    let fit = ok_json(&["dti", "fit", "--input", s(&truth), "--output-fa", s(&fa), "--png-dir", s(&png)]);
    // (1.7e-3, 3e-4, 3e-4): mean 7.6667e-4, FA = sqrt(1.5 * 1.30667e-6 / 3.07e-6)
    let l = [1.7e-3f64, 3e-4, 3e-4];
    let m = l.iter().sum::<f64>() / 3.0;
    let closed_form = (1.5 * l.iter().map(|v| (v - m).powi(2)).sum::<f64>() / l.iter().map(|v| v * v).sum::<f64>()).sqrt();
    let max_fa = fit["max_fa"].as_f64().unwrap();
    assert!((max_fa - closed_form).abs() < 1e-6, "annulus FA {max_fa} vs {closed_form}");
    assert!(fa.exists());
    assert!(png.join("fa_z0.png").exists() && png.join("rgb_z3.png").exists());
}

#[test]
fn full_pipeline_writes_metrics_csv() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    ok_json(&["phantom", "generate", "--shape", "32x32x2x12", "--noise", "0.01", "--seed", "3", "--output-truth", s(&p("t.vol")), "--output-kspace", s(&p("k.vol"))]);
    let mask = ok_json(&["mask", "generate", "--like", s(&p("k.vol")), "--af", "4", "--per-direction", "--seed", "3", "--output", s(&p("m.vol")), "--output-kspace", s(&p("ku.vol"))]);
    assert!((mask["af_achieved"].as_f64().unwrap() / 4.0 - 1.0).abs() <= 0.1);
    let recon = ok_json(&[
        "recon", "klr", "--input", s(&p("ku.vol")), "--mask", s(&p("m.vol")), "--rank", "6", "--ntrain", "300", "--iters", "10", "--seed", "3",
        "--output", s(&p("r.vol")), "--save-model", s(&p("model.vol")),
    ]);
    assert!(recon["consistency_error"].as_f64().unwrap() < 1e-10);
    ok_json(&["recon", "cs", "--input", s(&p("ku.vol")), "--mask", s(&p("m.vol")), "--iters", "10", "--output", s(&p("c.vol"))]);
    ok_json(&["dti", "fit", "--input", s(&p("r.vol")), "--output-fa", s(&p("fa.vol")), "--output-md", s(&p("md.vol"))]);
    let cmp = ok_json(&[
        "metrics", "compare", "--reference", s(&p("t.vol")), "--test", s(&p("r.vol")), "--method", "klr", "--af", "4",
        "--output", s(&p("metrics.csv")), "--output-fa-hist", s(&p("fa_hist.csv")),
    ]);
    let csv = std::fs::read_to_string(p("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "method,af,q_mode,nmse,psnr_db");
    assert!(lines[1].starts_with("klr,4,full,"));
    assert!(cmp["nmse"].as_f64().unwrap() > 0.0);
    let hist = std::fs::read_to_string(p("fa_hist.csv")).unwrap();
    assert_eq!(hist.lines().count(), 21);
}

#[test]
fn q_subset_mask_keeps_requested_directions() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    ok_json(&["phantom", "generate", "--shape", "32x32x1x12", "--output-truth", s(&p("t.vol")), "--output-kspace", s(&p("k.vol"))]);
    let m = ok_json(&[
        "mask", "generate", "--like", s(&p("k.vol")), "--af", "8", "--q-subset-dirs", "6", "--output", s(&p("m.vol")), "--output-kspace", s(&p("ku.vol")),
    ]);
    // 2 b0 + 6 directions
    assert_eq!(m["dims"][2], 8);
    let gtab: Value = serde_json::from_slice(&std::fs::read(p("ku.gtab.json")).unwrap()).unwrap();
    assert_eq!(gtab["bvalues"].as_array().unwrap().len(), 8);
}

#[test]
fn benchmark_run_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bench.json");
    std::fs::write(
        &cfg,
        r#"{"phantom": {"nx": 32, "ny": 32, "nz": 1, "n_directions": 12, "noise_sigma": 0.01},
            "afs": [4], "klr": {"n_train": 100, "rank_r": 4, "max_iters": 3}, "cs": {"max_iters": 3}}"#,
    )
    .unwrap();
    let runs: Vec<Vec<u8>> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            let summary = ok_json(&["benchmark", "run", "--config", s(&cfg), "--output-dir", s(&out), "--seed", "7"]);
            assert_eq!(summary["rows"], 6);
            std::fs::read(out.join("metrics.csv")).unwrap()
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    let text = String::from_utf8(runs[0].clone()).unwrap();
    assert_eq!(text.lines().count(), 7);
    assert!(text.contains("zero-fill,4,subset,"));
}

#[test]
fn phantom_generation_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let files: Vec<Vec<u8>> = ["a.vol", "b.vol"]
        .iter()
        .map(|n| {
            let p = dir.path().join(n);
            ok_json(&["phantom", "generate", "--shape", "32x32x1x8", "--noise", "0.05", "--seed", "11", "--output-truth", s(&p)]);
            std::fs::read(&p).unwrap()
        })
        .collect();
    assert_eq!(files[0], files[1]);
}
