use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SMALL_CONFIG: &str = r#"{
  "seed": 5,
  "synth": {
    "camera": {"f": 1000.0, "cx": 256.0, "cy": 144.0, "width": 512, "height": 288},
    "scenarios": {
      "families": [1, 2, 3, 4, 5, 6],
      "max_scripts_per_family": 1,
      "max_windows_per_script": 1,
      "seeds": [0, 1],
      "suite": {"count": 6, "tau_range": [1.5, 15.0], "depth_range": [20.0, 40.0],
                "lateral_range": [-1.0, 1.0], "seed": 7}
    }
  },
  "train": {"epochs": 2, "batch_size": 4}
}"#;

fn ttc(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ttc")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: Output) -> String {
    assert!(o.status.success(), "failed: {}\n{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    stdout(&o)
}

fn setup() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, SMALL_CONFIG).unwrap();
    let out = ok(ttc(&["--config", "cfg.json", "synth", "--out", "ds"], dir.path()));
    assert!(out.contains("sequences written"), "{out}");
    (dir, cfg)
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_indexes_every_family_and_is_reproducible() {
    let (dir, _) = setup();
    let index = read_json(&dir.path().join("ds/index.json"));
    let ids: Vec<&str> = index["sequences"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(index["count"].as_u64().unwrap() as usize, ids.len());
    assert_eq!(index["config_hash"].as_str().unwrap().len(), 64);
    // both seeds of scripted scenes plus the six suite scenes
    assert!(ids.iter().any(|i| i.ends_with("_r0")) && ids.iter().any(|i| i.ends_with("_r1")));
    assert_eq!(ids.iter().filter(|i| i.starts_with("cv")).count(), 6);
    for id in &ids {
        let m = read_json(&dir.path().join("ds").join(id).join("manifest.json"));
        assert_eq!(m["frames"].as_array().unwrap().len(), 6);
        assert_eq!(m["config_hash"], index["config_hash"]);
        assert!(dir.path().join("ds").join(id).join("frame_5.png").exists());
    }

    ok(ttc(&["--config", "cfg.json", "synth", "--out", "again"], dir.path()));
    assert_eq!(tree(&dir.path().join("ds")), tree(&dir.path().join("again")));
    // the printed count matches the index
    let refused = ttc(&["--config", "cfg.json", "synth", "--out", "ds"], dir.path());
    assert_eq!(refused.status.code(), Some(2));
    let forced = ok(ttc(&["--config", "cfg.json", "synth", "--out", "ds", "--force"], dir.path()));
    assert!(forced.starts_with(&format!("{} sequences", ids.len())), "{forced}");
}

#[test]
fn empty_selection_gives_empty_index() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("empty.json"), r#"{"synth": {"scenarios": {"families": [], "suite": null}}}"#).unwrap();
    let out = ok(ttc(&["--config", "empty.json", "synth", "--out", "ds"], dir.path()));
    assert!(out.starts_with("0 sequences"));
    let index = read_json(&dir.path().join("ds/index.json"));
    assert_eq!(index["count"], 0);
}

#[test]
fn annotate_matches_synthetic_labels() {
    let (dir, _) = setup();
    ok(ttc(&["--config", "cfg.json", "annotate", "ds"], dir.path()));
    let a = read_json(&dir.path().join("ds/annotations.json"));
    // scripted windows fit an average closing rate; constant-velocity scenes must match exactly
    let rows = a["sequences"].as_array().unwrap();
    assert_eq!(rows.len() as u64, read_json(&dir.path().join("ds/index.json"))["count"].as_u64().unwrap());
    let mut cv = 0;
    for row in rows {
        let dev = row["tau_deviation_s"].as_f64().unwrap();
        assert!(dev.is_finite());
        if row["sequence_id"].as_str().unwrap().starts_with("cv") {
            assert!(dev <= 1e-6, "{row}");
            cv += 1;
        }
    }
    assert_eq!(cv, 6);
}

#[test]
fn eval_writes_reports_and_prints_table() {
    let (dir, _) = setup();
    let out = ok(ttc(&["--config", "cfg.json", "eval", "ds", "--estimator", "detection", "--out", "r/det.json"], dir.path()));
    assert!(out.lines().next().unwrap().starts_with("estimator"));
    let report = read_json(&dir.path().join("r/det.json"));
    // noiseless boxes
    assert!(report["overall"]["mid"].as_f64().unwrap() < 10.0, "{}", report["overall"]);
    let csv = fs::read_to_string(dir.path().join("r/det.csv")).unwrap();
    assert!(csv.starts_with("estimator,MiD,MiD_c"));

    ok(ttc(&["--config", "cfg.json", "eval", "ds", "--estimator", "pixel_mse", "--gap", "3", "--out", "r/pix.json"], dir.path()));
    let pix = read_json(&dir.path().join("r/pix.json"));
    assert_eq!(pix["frame_gap"], 3);
    assert!(pix["overall"]["mid"].as_f64().unwrap() < 100.0);

    let merged = ok(ttc(&["report", "r/det.json", "r/pix.json", "--out", "r/table.csv"], dir.path()));
    assert_eq!(merged.lines().count(), 3);
    assert_eq!(fs::read_to_string(dir.path().join("r/table.csv")).unwrap().lines().count(), 3);

    // existing output needs --force
    let again = ttc(&["--config", "cfg.json", "eval", "ds", "--estimator", "detection", "--out", "r/det.json"], dir.path());
    assert_eq!(again.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_with_two() {
    let (dir, _) = setup();
    let cases: &[&[&str]] = &[
        &["--config", "cfg.json", "eval", "missing", "--estimator", "pixel_mse", "--out", "x.json"],
        &["--config", "cfg.json", "eval", "ds", "--estimator", "bogus", "--out", "x.json"],
        &["--config", "cfg.json", "eval", "ds", "--estimator", "feature_scale", "--out", "x.json"],
        &["--config", "nope.json", "eval", "ds", "--estimator", "pixel_mse", "--out", "x.json"],
        &["--config", "cfg.json", "eval", "ds", "--estimator", "pixel_mse", "--gap", "9", "--out", "x.json"],
        // default config hashes differently from the one that built the dataset
        &["eval", "ds", "--estimator", "pixel_mse", "--out", "x.json"],
        &["report", "missing.json"],
    ];
    for args in cases {
        let o = ttc(args, dir.path());
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!o.stderr.is_empty());
    }
    ok(ttc(&["eval", "ds", "--estimator", "detection", "--out", "x.json", "--force"], dir.path()));
}

#[test]
fn seed_flag_changes_the_hash() {
    let (dir, _) = setup();
    let o = ttc(&["--config", "cfg.json", "--seed", "6", "eval", "ds", "--estimator", "detection", "--out", "x.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_then_evaluate_feature_scale() {
    let (dir, _) = setup();
    let out = ok(ttc(&["--config", "cfg.json", "train", "ds", "--out", "model"], dir.path()));
    assert!(out.contains("val MiD"), "{out}");
    let m = dir.path().join("model");
    assert!(m.join("weights.bin").exists() && m.join("weights.json").exists());
    assert!(m.join("checkpoints/epoch_002.bin").exists());
    let curve = fs::read_to_string(m.join("loss_curve.csv")).unwrap();
    assert_eq!(curve.lines().next().unwrap(), "epoch,train_loss,val_mid");
    assert_eq!(curve.lines().count(), 3);

    ok(ttc(
        &["--config", "cfg.json", "eval", "ds", "--estimator", "feature_scale", "--weights", "model/weights.bin", "--out", "f.json"],
        dir.path(),
    ));
    let report = read_json(&dir.path().join("f.json"));
    assert_eq!(report["estimator"], "feature_scale:hand_crafted");

    let seq = read_json(&dir.path().join("ds/index.json"))["sequences"][0].as_str().unwrap().to_string();
    let est = ok(ttc(
        &["--config", "cfg.json", "estimate", &format!("ds/{seq}"), "--estimator", "feature_scale", "--weights", "model/weights.bin"],
        dir.path(),
    ));
    let v: Value = serde_json::from_str(&est).unwrap();
    assert!(v["tau_hat_s"].as_f64().unwrap().abs() <= 20.0);
}
