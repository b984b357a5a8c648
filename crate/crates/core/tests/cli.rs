//! The binary end to end on a tiny configuration.

use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "model.depth=18",
    "model.base_width=8",
    "model.fpn_channels=16",
    "model.input_size=64",
    "model.norm_groups=4",
    "data.train_layouts=1",
    "data.train_layout_size=512",
    "data.train_clips=8",
    "data.test_layout_size=512",
    "train.epochs=1",
];

fn lithohod(args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_lithohod"));
    for s in TINY {
        cmd.args(["--set", s]);
    }
    cmd.args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = lithohod(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_train_eval_detect() {
    let dir = tempfile::tempdir().unwrap();
    let (data, run) = (dir.path().join("data"), dir.path().join("run"));
    ok(&["gen-data", "--out", s(&data)]);
    assert!(data.join("test/annotations.jsonl").exists());
    ok(&["train", "--data", s(&data), "--out", s(&run)]);
    let log = std::fs::read_to_string(run.join("loss_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1);

    let ckpt = run.join("model.ckpt");
    let (e1, e2) = (dir.path().join("e1"), dir.path().join("e2"));
    ok(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data), "--out", s(&e1), "--plot"]);
    ok(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data), "--out", s(&e2)]);
    for f in ["report.json", "curve.csv", "curve.png", "detections.jsonl", "config.toml"] {
        assert!(e1.join(f).exists(), "{f}");
    }
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(e1.join("report.json")).unwrap()).unwrap();
    for k in ["recall", "fa", "ap", "auc", "curve"] {
        assert!(report.get(k).is_some(), "{k}");
    }
    assert_eq!(
        std::fs::read_to_string(e1.join("detections.jsonl")).unwrap(),
        std::fs::read_to_string(e2.join("detections.jsonl")).unwrap()
    );

    let clip = dir.path().join("clip.png");
    let png = std::fs::read_dir(data.join("test/clips"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "png"))
        .expect("test split holds clip images");
    std::fs::copy(png, &clip).unwrap();
    let sim = dir.path().join("sim");
    ok(&["litho-sim", "--clip", s(&clip), "--out", s(&sim)]);
    assert!(sim.join("resist.png").exists() && sim.join("deformation.bin").exists());
    let dets = dir.path().join("dets.jsonl");
    ok(&["detect", "--checkpoint", s(&ckpt), "--out", s(&dets), s(&clip)]);
    for line in std::fs::read_to_string(&dets).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["clip_id"], "clip");
    }
}

#[test]
fn bad_config_exits_two() {
    let out = lithohod(&["--set", "model.depth=19", "selftest"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.depth"));
    let out = lithohod(&["--set", "train.nonsense=1", "selftest"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = lithohod(&["litho-sim", "--clip", "/nonexistent/clip.png", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
