//! End-to-end smoke tests of the binary: the synth → train → track → eval
//! pipeline on a tiny configuration, plus the exit-code contract.

use std::fs;
use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_deftrack"))
}

/// Tiny model and schedule so the pipeline finishes in seconds.
const TINY_CONFIG: &str = r#"{
    "model": {
        "conv_channels": [2, 3, 4],
        "deform_channels": 2,
        "gate_hidden": 4,
        "head_widths": [8, 4]
    },
    "train": {
        "iters_per_step": 4,
        "neg_pool": 48,
        "batch_pos": 4,
        "batch_neg": 12,
        "pos_per_frame": 4,
        "neg_per_frame": 12
    },
    "track": {
        "candidates": 16,
        "init_iters": 2,
        "update_iters": 1,
        "init_pos_samples": 20,
        "init_neg_samples": 60,
        "neg_pool": 48,
        "batch_pos": 4,
        "batch_neg": 12,
        "update_pos_per_frame": 4,
        "update_neg_per_frame": 12
    }
}"#;

#[test]
fn pipeline_synth_train_track_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = dir.join("config.json");
    fs::write(&cfg, TINY_CONFIG).unwrap();

    let data = dir.join("suite");
    let status = bin()
        .args(["synth", "--seed", "3", "--frames", "4"])
        .arg("--out")
        .arg(&data)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    for name in ["deformation", "rotation", "scale", "illumination", "occlusion", "static"] {
        let seq = data.join(name);
        assert!(seq.join("groundtruth_rect.txt").exists(), "{} missing gt", name);
        assert!(seq.join("frames/0001.pgm").exists(), "{} missing frames", name);
    }

    let model = dir.join("gate.json");
    let status = bin()
        .args(["train", "--variant", "gate"])
        .arg("--data")
        .arg(&data)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&model)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(model.exists());

    let result = dir.join("results/static.json");
    let status = bin()
        .arg("track")
        .arg("--model")
        .arg(&model)
        .arg("--seq")
        .arg(data.join("static"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&result)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(result.exists());

    let report = dir.join("report");
    let status = bin()
        .arg("eval")
        .arg("--results")
        .arg(dir.join("results/*.json"))
        .arg("--out")
        .arg(&report)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let table = fs::read_to_string(report.join("table.txt")).unwrap();
    assert!(table.contains("precision@20"));
    assert!(table.contains("gate"));
    // per-result artifacts: curves CSV and SVG next to the summarized JSON
    assert!(report.join("static.json").exists());
    let svg: Vec<_> = fs::read_dir(&report)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "svg"))
        .collect();
    assert!(!svg.is_empty(), "eval emitted no SVG plots");
}

#[test]
fn ablate_emits_table() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = dir.join("config.json");
    fs::write(&cfg, TINY_CONFIG).unwrap();
    let out = dir.join("ablation");
    let status = bin()
        .args(["ablate", "--seeds", "1", "--frames", "3"])
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let table = fs::read_to_string(out.join("table.txt")).unwrap();
    // header + 3 variants x 6 attributes
    assert_eq!(table.lines().count(), 19);
    assert!(out.join("report.json").exists());
}

#[test]
fn gradcheck_exits_zero() {
    let status = bin().args(["gradcheck", "--seeds", "2"]).status().unwrap();
    assert_eq!(status.code(), Some(0));
}

#[test]
fn validation_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    // unknown variant
    let status = bin()
        .args(["train", "--variant", "bogus"])
        .arg("--data")
        .arg(dir)
        .arg("--out")
        .arg(dir.join("m.json"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));

    // malformed ground-truth file
    let seq = dir.join("bad");
    fs::create_dir_all(seq.join("frames")).unwrap();
    fs::write(seq.join("groundtruth_rect.txt"), "1,2,3\n").unwrap();
    let model = write_tiny_model(dir);
    let status = bin()
        .arg("track")
        .arg("--model")
        .arg(&model)
        .arg("--seq")
        .arg(&seq)
        .arg("--out")
        .arg(dir.join("r.json"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn io_failures_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let status = bin()
        .arg("track")
        .arg("--model")
        .arg(tmp.path().join("missing-model.json"))
        .arg("--seq")
        .arg(tmp.path())
        .arg("--out")
        .arg(tmp.path().join("r.json"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

/// Serializes a freshly initialized tiny model for tests that need a valid
/// --model argument.
fn write_tiny_model(dir: &Path) -> std::path::PathBuf {
    use deftrack::config::ModelConfig;
    use deftrack::tracker::{TrackerModel, Variant};
    let cfg = ModelConfig {
        conv_channels: [2, 3, 4],
        deform_channels: 2,
        gate_hidden: 4,
        head_widths: [8, 4],
        ..ModelConfig::default()
    };
    let model = TrackerModel::new(&cfg, Variant::Baseline, 0);
    let path = dir.join("tiny-model.json");
    fs::write(&path, serde_json::to_string(&model).unwrap()).unwrap();
    path
}
