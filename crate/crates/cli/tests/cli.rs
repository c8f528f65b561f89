mod support;

use std::fs;
use std::path::Path;

use support::{fixture, ok, pipeline, run_in, stderr_json, tree};

#[test]
fn pipeline_reruns_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (sa, sb) = (pipeline(a.path()), pipeline(b.path()));
    assert_eq!(sa, sb);
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (k, v) in &ta {
        assert!(v == &tb[k], "{} differs between runs", k.display());
    }
    for expected in [
        "x/frames.jsonl",
        "x/run.toml",
        "c/corpus.jsonl",
        "c/buckets.json",
        "t/text.sdtk",
        "t/loss.csv",
        "e/embeddings.sdem",
        "e/embeddings.jsonl",
        "m/toy.sdtk",
        "m/metrics.csv",
        "m/predictions.jsonl",
        "n/ap.json",
        "v/ap.csv",
        "a/frames.jsonl",
    ] {
        assert!(ta.contains_key(Path::new(expected)), "missing {expected}");
    }
    let metrics = String::from_utf8(ta[Path::new("m/metrics.csv")].clone()).unwrap();
    assert_eq!(
        metrics.lines().next().unwrap(),
        "epoch,mode,ap_centerline,ap_boundary,ap_divider,map"
    );
    assert_eq!(metrics.lines().count(), 3);
    let run = String::from_utf8(ta[Path::new("a/run.toml")].clone()).unwrap();
    assert!(run.contains("element_drop_rate = 0.2"), "{run}");
    let orf: serde_json::Value = serde_json::from_str(sa.last().unwrap().trim()).unwrap();
    assert!(orf["max_off_diagonal"].as_f64().unwrap() < 1e-6);
}

#[test]
fn seed_changes_artifacts() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["gen-scenes", "--train", "4", "--eval", "2", "--out", "a"]);
    ok(
        d.path(),
        &["--seed", "1", "gen-scenes", "--train", "4", "--eval", "2", "--out", "b"],
    );
    assert_ne!(
        fs::read(d.path().join("a/train.jsonl")).unwrap(),
        fs::read(d.path().join("b/train.jsonl")).unwrap()
    );
}

#[test]
fn eval_of_ground_truth_against_itself_is_perfect() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["gen-scenes", "--train", "2", "--eval", "10", "--out", "s"]);
    ok(
        d.path(),
        &[
            "eval",
            "--pred",
            "s/eval_gt.jsonl",
            "--gt",
            "s/eval.jsonl",
            "--out",
            "v",
        ],
    );
    let ap: serde_json::Value = serde_json::from_slice(&fs::read(d.path().join("v/ap.json")).unwrap()).unwrap();
    assert!((ap["map"].as_f64().unwrap() - 1.0).abs() < 1e-12, "{ap}");
}

#[test]
fn orf_check_reports_capacity_violations() {
    let d = tempfile::tempdir().unwrap();
    let good: serde_json::Value =
        serde_json::from_str(ok(d.path(), &["orf-check", "--n", "8", "--dorf", "16"]).trim()).unwrap();
    assert!(good["max_diagonal_deviation"].as_f64().unwrap() < 1e-6);
    let bad = run_in(d.path(), &["orf-check", "--n", "20", "--dorf", "16"]);
    assert_eq!(bad.status.code(), Some(3));
    assert_eq!(stderr_json(&bad)["exit_code"], 3);
}

#[test]
fn usage_and_config_errors_exit_one() {
    let d = tempfile::tempdir().unwrap();
    for args in [
        vec!["frobnicate"],
        vec!["gen-scenes", "--bogus"],
        vec!["train-toy", "--train", "a", "--eval", "b", "--mode", "sideways"],
    ] {
        let out = run_in(d.path(), &args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert_eq!(stderr_json(&out)["error"], "usage");
    }
    fs::write(d.path().join("bad.toml"), "[toy-task]\nepoch = 3\n").unwrap();
    let out = run_in(d.path(), &["--config", "bad.toml", "gen-scenes"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"], "config");
    let out = run_in(d.path(), &["augment", "--in", "f.jsonl", "--sigma-trans", "-1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn data_errors_exit_two() {
    let d = tempfile::tempdir().unwrap();
    let out = run_in(d.path(), &["build-corpus", "--input", "missing.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    fs::copy(fixture("truncated.osm"), d.path().join("t.osm")).unwrap();
    let out = run_in(d.path(), &["extract", "--osm", "t.osm", "--ego", "8.404,49.01,0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!stderr_json(&out)["message"].as_str().unwrap().is_empty());
}

#[test]
fn help_exits_zero() {
    let d = tempfile::tempdir().unwrap();
    let out = run_in(d.path(), &["--help"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("train-toy"));
}
