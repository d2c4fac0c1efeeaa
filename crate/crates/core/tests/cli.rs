use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pillar_edge::frames::read_labels;
use pillar_edge::post::{write_detections, Detection};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pillar-edge"));
    c.env_remove("PILLAR_EDGE_CONFIG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn pillar-edge")
}

fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, scenes: usize, seed: u64) {
    run_ok(&["synth", "--scenes", &scenes.to_string(), "--seed", &seed.to_string(), "--cars", "3", "--out", s(dir)]);
}

/// Synth, init, calibrate and compile with the tiny preset. Returns (data, weights, compiled).
fn build_chain(root: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let data = root.join("data");
    synth(&data, 3, 7);
    let w = root.join("w.ppw");
    let calib = root.join("calib.json");
    let ppq = root.join("model.ppq");
    run_ok(&["--config", "tiny", "init-weights", "--out", s(&w), "--seed", "3"]);
    run_ok(&["--config", "tiny", "calibrate", "--weights", s(&w), "--data", s(&data), "--out", s(&calib), "--frames", "3"]);
    run_ok(&["--config", "tiny", "compile", "--weights", s(&w), "--calib", s(&calib), "--out", s(&ppq)]);
    (data, w, ppq)
}

#[test]
fn synth_writes_numbered_pairs() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 2, 7);
    for stem in ["000000", "000001"] {
        assert!(dir.path().join(format!("{stem}.bin")).is_file());
        let labels = read_labels(dir.path().join(format!("{stem}.txt"))).unwrap();
        assert_eq!(labels.len(), 3);
    }
    assert!(dir.path().join("manifest.json").is_file());
}

#[test]
fn synth_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth(a.path(), 2, 7);
    synth(b.path(), 2, 7);
    for name in ["000000.bin", "000000.txt", "000001.bin", "000001.txt"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    let c = tempfile::tempdir().unwrap();
    synth(c.path(), 2, 8);
    assert_ne!(fs::read(a.path().join("000000.bin")).unwrap(), fs::read(c.path().join("000000.bin")).unwrap());
}

#[test]
fn synth_zero_scenes_writes_only_manifest() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 0, 1);
    let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, vec!["manifest.json"]);
}

#[test]
fn full_chain_and_reproducible_compile() {
    let root = tempfile::tempdir().unwrap();
    let (data, w, ppq) = build_chain(root.path());
    assert!(ppq.with_extension("pfn.ppw").is_file());
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(root.path().join("model.ppq.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "compile");

    let again = root.path().join("again.ppq");
    run_ok(&["--config", "tiny", "compile", "--weights", s(&w), "--calib", s(&root.path().join("calib.json")), "--out", s(&again)]);
    assert_eq!(fs::read(&ppq).unwrap(), fs::read(&again).unwrap());

    let seq = root.path().join("seq.jsonl");
    let pipe = root.path().join("pipe.jsonl");
    run_ok(&["--config", "tiny", "infer", "--compiled", s(&ppq), "--data", s(&data), "--out", s(&seq)]);
    run_ok(&["--config", "tiny", "infer", "--compiled", s(&ppq), "--data", s(&data), "--out", s(&pipe), "--pipeline", "--queue-depth", "1"]);
    let seq_text = fs::read_to_string(&seq).unwrap();
    assert!(!seq_text.is_empty());
    assert_eq!(seq_text, fs::read_to_string(&pipe).unwrap());
    assert!(root.path().join("seq.jsonl.stats.json").is_file());

    let text = run_ok(&["--config", "tiny", "eval", "--dets", s(&seq), "--labels", s(&data)]);
    for key in ["tp=", "fp=", "fn=", "precision=", "recall=", "f1=", "ap="] {
        assert!(text.contains(key), "missing {key} in {text}");
    }
    let json: serde_json::Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    assert!(json["f1"].as_f64().unwrap() >= 0.0);

    let float_out = root.path().join("float.jsonl");
    run_ok(&["--config", "tiny", "infer", "--weights", s(&w), "--data", s(&data), "--out", s(&float_out), "--conf", "0.6"]);
    for line in fs::read_to_string(&float_out).unwrap().lines() {
        assert!(Detection::from_json_line(line).unwrap().score >= 0.6);
    }

    let bench = run_ok(&["--config", "tiny", "bench", "--compiled", s(&ppq), "--data", s(&data), "--frames", "6", "--stage-delays", "1,3,1"]);
    assert!(bench.contains("speedup="), "{bench}");
}

#[test]
fn compile_rejects_mismatched_config() {
    let root = tempfile::tempdir().unwrap();
    let (_, w, _) = build_chain(root.path());
    let out = run(&["--config", "desk", "compile", "--weights", s(&w), "--calib", s(&root.path().join("calib.json")), "--out", s(&root.path().join("x.ppq"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error: "), "{err}");
    assert!(err.contains("fingerprint") || err.contains("shape"), "{err}");
}

#[test]
fn empty_data_dir_gives_empty_output() {
    let root = tempfile::tempdir().unwrap();
    let w = root.path().join("w.ppw");
    let data = root.path().join("empty");
    fs::create_dir(&data).unwrap();
    run_ok(&["--config", "tiny", "init-weights", "--out", s(&w)]);
    let out = root.path().join("d.jsonl");
    run_ok(&["--config", "tiny", "infer", "--weights", s(&w), "--data", s(&data), "--out", s(&out)]);
    assert_eq!(fs::read_to_string(&out).unwrap(), "");
}

#[test]
fn eval_of_ground_truth_is_perfect() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    synth(&data, 4, 11);
    let mut dets = Vec::new();
    for id in 0..4u64 {
        for g in read_labels(data.join(format!("{id:06}.txt"))).unwrap() {
            dets.push(Detection { frame_id: id, class_name: g.class_name, score: 1.0, bbox: g.bbox });
        }
    }
    let path = root.path().join("oracle.jsonl");
    write_detections(fs::File::create(&path).unwrap(), &dets).unwrap();
    let json_out = root.path().join("eval.json");
    let text = run_ok(&["eval", "--dets", s(&path), "--labels", s(&data), "--json-out", s(&json_out)]);
    assert!(text.contains("f1=1.000000"), "{text}");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json_out).unwrap()).unwrap();
    assert_eq!(json["fn"], 0);
    assert_eq!(json["ap"], 1.0);
}

#[test]
fn argument_errors_exit_2() {
    let out = run(&["eval", "--dets", "a", "--labels", "b", "--conf", "1.01"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: argument: "));
    let out = run(&["infer", "--data", "x", "--out", "y"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_1_with_one_line() {
    let root = tempfile::tempdir().unwrap();
    let out = run(&["--config", "tiny", "bench", "--weights", "w.ppw", "--data", s(root.path()), "--frames", "0"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: "), "{err}");

    let out = run(&["infer", "--weights", s(&root.path().join("missing.ppw")), "--data", s(root.path()), "--out", s(&root.path().join("o.jsonl"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));
}

#[test]
fn config_file_and_env_are_honored() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("cfg.json");
    fs::write(&cfg, r#"{"post": {"conf_thr": 0.9}}"#).unwrap();
    let w = root.path().join("w.ppw");
    run_ok(&["--config", s(&cfg), "init-weights", "--out", s(&w)]);
    // full-size default config: weights must not fit the tiny preset
    let data = root.path().join("data");
    synth(&data, 1, 2);
    let out = bin()
        .env("PILLAR_EDGE_CONFIG", "tiny")
        .args(["infer", "--weights", s(&w), "--data", s(&data), "--out", s(&root.path().join("o.jsonl"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
