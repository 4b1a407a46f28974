//! End-to-end checks of the `vrl` binary: pipeline wiring, determinism,
//! manifest verification and exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn vrl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vrl"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn vrl")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = vrl(dir, args);
    assert!(
        out.status.success(),
        "vrl {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn pipeline_is_deterministic_and_verified() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(
        dir.join("counts.tsv"),
        "A\tcat\tsmall\t40\nA\tdog\tbrown\t35\nA\tdog\tsmall\t29\n\
         P\tcat\tnear\tdog\t50\nP\tdog\tnear\tcat\t50\nP\tdog\tchasing\tcat\t31\n",
    )
    .unwrap();
    std::fs::write(
        dir.join("run.toml"),
        "graph = \"graph.json\"\nscenes = \"train.jsonl\"\nseed = 3\n\
         variant = \"vrl\"\nout_dir = \"run\"\n\n[train]\nepochs = 2\n\
         hidden = [16]\nbatch = 8\n\n[features]\nd_image = 8\nd_instance = 8\nd_phrase = 4\n",
    )
    .unwrap();

    let out = ok(dir, &["build-graph", "--counts", "counts.tsv", "--out", "graph.json"]);
    let stats: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    // The count-29 phrases fall below the default min-count of 30.
    assert_eq!(stats["n_attr_edges"], 2);
    assert_eq!(stats["n_pred_edges"], 3);

    ok(dir, &["gen-scenes", "--graph", "graph.json", "--seed", "11", "--count", "20", "--out", "train.jsonl"]);
    ok(dir, &["gen-scenes", "--graph", "graph.json", "--seed", "22", "--count", "10", "--out", "test.jsonl"]);

    ok(dir, &["train", "--config", "run.toml"]);
    let metrics1 = std::fs::read(dir.join("run/metrics.csv")).unwrap();
    ok(dir, &["train", "--config", "run.toml"]);
    assert_eq!(metrics1, std::fs::read(dir.join("run/metrics.csv")).unwrap());

    ok(dir, &["evaluate", "--config", "run.toml", "--scenes", "test.jsonl", "--train-scenes", "train.jsonl", "--out", "eval1.json"]);
    ok(dir, &["evaluate", "--config", "run.toml", "--scenes", "test.jsonl", "--out", "eval2.json"]);
    ok(dir, &["evaluate", "--config", "run.toml", "--scenes", "test.jsonl", "--out", "eval3.json"]);
    let e2 = std::fs::read(dir.join("eval2.json")).unwrap();
    assert_eq!(e2, std::fs::read(dir.join("eval3.json")).unwrap());
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("eval1.json")).unwrap()).unwrap();
    assert!(report["recall50_relationship"].is_number());

    let out = ok(dir, &["inspect", "--config", "run.toml", "--scene-index", "0"]);
    let trace: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(trace["steps"].as_array().is_some_and(|s| !s.is_empty()));

    // Tampering with a training input invalidates the recorded manifest hash.
    let mut scenes = std::fs::read(dir.join("train.jsonl")).unwrap();
    let cut = scenes.iter().position(|&b| b == b'\n').unwrap() + 1;
    scenes.truncate(cut);
    std::fs::write(dir.join("train.jsonl"), scenes).unwrap();
    let out = vrl(dir, &["evaluate", "--config", "run.toml", "--scenes", "test.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("hash"));
}

#[test]
fn bad_usage_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(vrl(tmp.path(), &["--bogus-flag"]).status.code(), Some(2));
    assert_eq!(vrl(tmp.path(), &["no-such-command"]).status.code(), Some(2));
}

#[test]
fn missing_input_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let out = vrl(
        tmp.path(),
        &["build-graph", "--counts", "absent.tsv", "--out", "g.json"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}
