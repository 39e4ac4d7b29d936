use std::path::Path;
use std::process::{Command, Output};

use octa3d::pipeline::{DatasetConfig, PipelineConfig, TrainConfig};
use octa3d::scnet::Topology;
use serde_json::Value;

fn octa3d(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_octa3d")).args(args).output().expect("spawn cli")
}

fn code(args: &[&str]) -> i32 {
    octa3d(args).status.code().unwrap_or(-1)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(path: &Path, cfg: &PipelineConfig) {
    std::fs::write(path, serde_json::to_vec_pretty(cfg).unwrap()).unwrap();
}

fn small() -> PipelineConfig {
    PipelineConfig {
        dataset: DatasetConfig {
            n: 3,
            ..Default::default()
        },
        train: TrainConfig {
            steps: 2,
            batch_size: 1,
            ..Default::default()
        },
        ..PipelineConfig::default()
    }
}

#[test]
fn invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&["phantom", "--n", "0", "--out", s(dir.path())]), 2);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"seed": 1, "nonsense": true}"#).unwrap();
    assert_eq!(code(&["--config", s(&bad), "phantom", "--out", s(dir.path())]), 2);
}

#[test]
fn missing_inputs_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let nowhere = dir.path().join("nowhere");
    assert_eq!(code(&["train", "--data", s(&nowhere), "--out", s(dir.path())]), 3);
    assert_eq!(code(&["--config", s(&nowhere), "phantom"]), 3);
    assert_eq!(
        code(&["eval-depth", "--pred", s(&nowhere), "--gt", s(&nowhere), "--out", s(dir.path())]),
        3
    );
}

#[test]
fn train_predict_and_topology_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("small.json");
    write_config(&cfg_path, &small());
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    assert_eq!(code(&["--config", s(&cfg_path), "phantom", "--out", s(&data)]), 0);
    assert_eq!(code(&["--config", s(&cfg_path), "train", "--data", s(&data), "--out", s(&run)]), 0);

    let report: Value = serde_json::from_slice(&std::fs::read(run.join("train_report.json")).unwrap()).unwrap();
    assert_eq!(report["command"], "train");
    assert_eq!(report["metrics"]["steps"], 2);
    let log = std::fs::read_to_string(run.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    for line in log.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        let parts = ["l_seg", "l_accuracy", "l_structure"];
        assert!(parts.iter().all(|k| v[k].is_f64()), "{line}");
    }

    let ckpt = run.join("checkpoint.scn");
    let angio = data.join("sample_0000_angio.pgm");
    let pred = dir.path().join("pred");
    let args = ["predict", "--checkpoint", s(&ckpt), "--angio", s(&angio), "--out", s(&pred)];
    assert_eq!(code(&[&["--config", s(&cfg_path)], &args[..]].concat()), 0);
    assert!(pred.join("sample_0000_pred_depth.pfm").is_file());
    assert!(pred.join("sample_0000_pred_seg.pgm").is_file());

    let mut other = small();
    other.topology = Topology {
        levels: other.topology.levels,
        base_width: other.topology.base_width * 2,
    };
    let other_path = dir.path().join("other.json");
    write_config(&other_path, &other);
    assert_eq!(code(&[&["--config", s(&other_path)], &args[..]].concat()), 4);
}

#[test]
fn self_evaluation_is_exact_and_empty_cloud_is_undefined() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(code(&["phantom", "--n", "1", "--out", s(&data)]), 0);
    let depth = data.join("sample_0000_depth.pfm");
    let seg = data.join("sample_0000_seg.pgm");
    let out = octa3d(&[
        "eval-depth",
        "--pred",
        s(&depth),
        "--gt",
        s(&depth),
        "--mask",
        s(&seg),
        "--out",
        s(dir.path()),
    ]);
    assert!(out.status.success());
    let metrics: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(metrics["rmse"], 0.0);
    assert_eq!(metrics["ard"], 0.0);

    let recon = dir.path().join("recon");
    assert_eq!(
        code(&["reconstruct", "--seg", s(&seg), "--depth", s(&depth), "--out", s(&recon)]),
        0
    );
    let cloud = recon.join("recon_cloud.ply");
    let out = octa3d(&["eval-recon", "--pred", s(&cloud), "--gt", s(&cloud), "--out", s(dir.path())]);
    assert!(out.status.success());
    let metrics: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(metrics["chamfer"], 0.0);

    let empty = dir.path().join("empty.ply");
    std::fs::copy("tests/golden/empty_cloud.ply", &empty).unwrap();
    assert_eq!(
        code(&["eval-recon", "--pred", s(&empty), "--gt", s(&cloud), "--out", s(dir.path())]),
        5
    );
}
