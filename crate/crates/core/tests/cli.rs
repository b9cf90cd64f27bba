use std::fs;
use std::path::Path;
use std::process::Command;

fn ccdepth(args: &[&str], cwd: &Path) {
    let out = Command::new(env!("CARGO_BIN_EXE_ccdepth"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success(), "ccdepth {args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_augment_train_eval() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ccdepth(&["synth", "--scenes", "4", "--seed", "3", "--out", "data", "--width", "32", "--height", "16"], root);
    ccdepth(&["augment", "--dataset", "data", "--weathers", "rain,snow,fog", "--magnitudes", "1,2", "--seed", "4"], root);
    assert!(root.join("data/rig.json").exists());
    assert!(root.join("data/scene_00003/000000_L_fog_2.png").exists());

    let config = r#"{
        "dataset": "data",
        "mode": "curriculum_contrastive",
        "epochs": 2,
        "batch_size": 2,
        "learning_rate": 0.001,
        "patience": [1, 1, null],
        "threshold": 0.0005,
        "w_cst": 0.02,
        "w_max": 10.0,
        "lambda": 2.0,
        "detach_enabled": true,
        "smoothness_weight": 0.001,
        "base_channels": 2,
        "seed": 0
    }"#;
    fs::write(root.join("run.json"), config).unwrap();
    ccdepth(&["train", "--config", "run.json", "--out", "run"], root);
    let log = fs::read_to_string(root.join("run/train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    assert!(root.join("run/final.ckpt").exists());

    ccdepth(
        &["eval", "--checkpoint", "run/final.ckpt", "--dataset", "data", "--variants", "clear_0,fog_2", "--out", "report.json"],
        root,
    );
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(root.join("report.json")).unwrap()).unwrap();
    let keys: Vec<&str> = report.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, ["average", "clear_0", "fog_2"]);
    for metric in ["absrel", "sqrel", "rmse", "rmselog", "a1", "a2", "a3"] {
        assert!(report["fog_2"][metric].is_f64(), "{metric}");
    }
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.json"), r#"{"dataset": "x", "epoch": 3}"#).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ccdepth"))
        .args(["train", "--config", "bad.json", "--out", "run"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch"));
}
