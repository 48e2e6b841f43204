use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ifgan::models::Architecture;
use ifgan::training::{Precision, TrainConfig};
use tempfile::TempDir;

fn ifgan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ifgan"))
        .args(args)
        .env("IFGAN_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A 6-identity corpus at 32 px and a matching micro config, in `dir`.
fn workspace(dir: &Path) -> (PathBuf, PathBuf) {
    let data = dir.join("data");
    let out = ifgan(&["synth-data", "--identities", "6", "--side", "32", "--out-dir", s(&data)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let cfg = TrainConfig {
        steps: 4,
        batch_size: 4,
        precision: Precision::F64,
        architecture: Architecture::micro(1, 6),
        n_folds: 3,
        resize_side: 18,
        crop_side: 16,
        validate_every: 2,
        checkpoint_every: 2,
        data_dir: Some(data.clone()),
        ..TrainConfig::default()
    };
    let path = dir.join("config.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    (data, path)
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn synth_data_writes_the_full_corpus_reproducibly() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let out = ifgan(&["synth-data", "--out-dir", s(dir)]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let mut names: Vec<_> = std::fs::read_dir(a.join("images")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 500);
    assert!(a.join("manifest.json").is_file());
    assert_eq!(read(&a.join("manifest.json")), read(&b.join("manifest.json")));
    for n in &names {
        assert_eq!(read(&a.join("images").join(n)), read(&b.join("images").join(n)), "{n:?}");
    }
}

#[test]
fn train_writes_metrics_config_and_checkpoints() {
    let tmp = TempDir::new().unwrap();
    let (_, cfg) = workspace(tmp.path());
    let run = tmp.path().join("run");
    let out = ifgan(&["train", "--config", s(&cfg), "--out-dir", s(&run)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = String::from_utf8(read(&run.join("metrics.csv"))).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.starts_with("step,"));
    let echoed: serde_json::Value = serde_json::from_slice(&read(&run.join("config.json"))).unwrap();
    let loss = &echoed["loss"];
    assert_eq!((loss["lambda1"].as_f64(), loss["lambda2"].as_f64(), loss["lambda3"].as_f64()), (Some(1.0), Some(200.0), Some(50.0)));
    for f in ["final.ifg", "checkpoints/step_000002.ifg", "checkpoints/step_000004.ifg", "run_manifest.json"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&read(&run.join("run_manifest.json"))).unwrap();
    assert!(manifest["files"].as_array().unwrap().iter().any(|f| f == "metrics.csv"));
}

#[test]
fn resuming_reproduces_an_uninterrupted_run_bitwise() {
    let tmp = TempDir::new().unwrap();
    let (_, cfg) = workspace(tmp.path());
    let (whole, part) = (tmp.path().join("whole"), tmp.path().join("part"));
    let out = ifgan(&["train", "--config", s(&cfg), "--out-dir", s(&whole)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = ifgan(&["train", "--config", s(&cfg), "--steps", "2", "--out-dir", s(&part)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let half = part.join("final.ifg");
    let out = ifgan(&["train", "--config", s(&cfg), "--resume", s(&half), "--out-dir", s(&part)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(read(&part.join("final.ifg")), read(&whole.join("final.ifg")));
    assert_eq!(read(&part.join("metrics.csv")), read(&whole.join("metrics.csv")));
}

#[test]
fn resuming_with_another_config_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let (_, cfg) = workspace(tmp.path());
    let run = tmp.path().join("run");
    let out = ifgan(&["train", "--config", s(&cfg), "--steps", "2", "--out-dir", s(&run)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let ck = run.join("final.ifg");
    let out = ifgan(&["train", "--config", s(&cfg), "--seed", "9", "--resume", s(&ck), "--out-dir", s(&run)]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
}

#[test]
fn eval_is_repeatable_and_reports_probes() {
    let tmp = TempDir::new().unwrap();
    let (_, cfg) = workspace(tmp.path());
    let run = tmp.path().join("run");
    assert_eq!(code(&ifgan(&["train", "--config", s(&cfg), "--out-dir", s(&run)])), 0);
    let ck = run.join("final.ifg");
    let a = ifgan(&["eval", "--checkpoint", s(&ck)]);
    let b = ifgan(&["eval", "--checkpoint", s(&ck), "--out-dir", s(&run)]);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let report: serde_json::Value = serde_json::from_slice(&read(&run.join("eval_report.json"))).unwrap();
    let acc = report["test"]["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert!(report["probe_generated"]["accuracy"].is_number());
    let wrong_fold = ifgan(&["eval", "--checkpoint", s(&ck), "--fold", "2"]);
    assert_eq!(code(&wrong_fold), 1, "{}", stderr(&wrong_fold));
}

#[test]
fn transfer_writes_a_four_column_grid() {
    let tmp = TempDir::new().unwrap();
    let (data, cfg) = workspace(tmp.path());
    let run = tmp.path().join("run");
    assert_eq!(code(&ifgan(&["train", "--config", s(&cfg), "--out-dir", s(&run)])), 0);
    let inputs = [data.join("images/id000_e0_l4.pgm"), data.join("images/id001_e3_l3.pgm")];
    assert!(inputs.iter().all(|p| p.is_file()), "corpus file names changed");
    let grid = tmp.path().join("grid.pgm");
    let ck = run.join("final.ifg");
    let out = ifgan(&[
        "transfer", "--checkpoint", s(&ck), "--input", s(&inputs[0]), s(&inputs[1]),
        "--manifest", s(&data), "--out", s(&grid),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let img = ifgan::data::GrayImage::load_pgm(&grid).unwrap();
    assert_eq!((img.width, img.height), (4 * 16 + 3 * 2, 2 * 16 + 2));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().count(), 2);

    let lone = tmp.path().join("lone.pgm");
    std::fs::copy(&inputs[0], &lone).unwrap();
    let out = ifgan(&["transfer", "--checkpoint", s(&ck), "--input", s(&lone), "--out", s(&grid)]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("keypoints"));
}

#[test]
fn gradcheck_passes_and_catches_a_broken_rule() {
    let ok = ifgan(&["gradcheck"]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stdout));
    let bad = ifgan(&["gradcheck", "--fault", "conv2d"]);
    assert_eq!(code(&bad), 3);
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL"));
    let unknown = ifgan(&["gradcheck", "--fault", "warp"]);
    assert_eq!(code(&unknown), 1);
}

#[test]
fn folds_prints_a_partition() {
    let out = ifgan(&["folds", "--identities", "20", "--n-folds", "10"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let plan: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let folds = plan["folds"].as_array().unwrap();
    assert_eq!(folds.len(), 10);
    let mut all: Vec<u64> = folds.iter().flat_map(|f| f.as_array().unwrap().iter().map(|v| v.as_u64().unwrap())).collect();
    all.sort_unstable();
    assert_eq!(all, (0..20).collect::<Vec<_>>());
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&ifgan(&["--help"])), 0);
    assert_eq!(code(&ifgan(&["no-such-verb"])), 1);
    assert_eq!(code(&ifgan(&["synth-data"])), 1, "missing --out-dir");
    let bad_cfg = tmp.path().join("bad.json");
    std::fs::write(&bad_cfg, r#"{"batch_size": 0}"#).unwrap();
    let out = ifgan(&["train", "--config", s(&bad_cfg), "--data", s(tmp.path()), "--out-dir", s(tmp.path())]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    let out = ifgan(&["train", "--data", s(&tmp.path().join("missing")), "--out-dir", s(tmp.path())]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    let junk = tmp.path().join("junk.ifg");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let out = ifgan(&["eval", "--checkpoint", s(&junk)]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("magic"));
}
