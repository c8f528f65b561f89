//! Shared helpers for driving the binary from tests.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_sdprior");

pub const TINY: &str = r#"
seed = 3

[text-encoder]
epochs = 1
batch_size = 16
pairs_per_tagset = 2
vocab_size = 128

[text-encoder.encoder]
layers = 1
heads = 2
d_model = 16
d_ff = 32
max_len = 32
d_out = 16

[sd-encoder]
d_model = 16
layers = 1
heads = 2
d_ff = 32
d_orf = 16
d_pos = 8
d_tag = 16

[toy-task]
epochs = 2
batch_size = 8
eval_every = 1

[toy-task.decoder]
queries = 8
layers = 1
heads = 2
d_ff = 32
"#;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

pub fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run_in(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn stderr_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(text.trim_end().lines().count(), 1, "{text}");
    serde_json::from_str(text.trim()).unwrap()
}

pub fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    files
}

/// Every subcommand in sequence, inside `dir`, using only relative paths.
pub fn pipeline(dir: &Path) -> Vec<String> {
    fs::write(dir.join("tiny.toml"), TINY).unwrap();
    fs::copy(fixture("valid.osm"), dir.join("valid.osm")).unwrap();
    let c = ["--config", "tiny.toml"];
    let steps: Vec<Vec<&str>> = vec![
        vec![
            "extract",
            "--osm",
            "valid.osm",
            "--ego",
            "8.4040,49.0100,0",
            "--ego",
            "8.4045,49.0102,90",
            "--out",
            "x",
        ],
        vec!["gen-scenes", "--train", "24", "--eval", "8", "--out", "s"],
        vec!["build-corpus", "--input", "s/train.jsonl", "--out", "c"],
        vec!["pretrain-tags", "--corpus", "c/corpus.jsonl", "--out", "t"],
        vec!["embed", "--checkpoint", "t", "--frames", "x/frames.jsonl", "--out", "e"],
        vec![
            "train-toy",
            "--train",
            "s/train.jsonl",
            "--eval",
            "s/eval.jsonl",
            "--mode",
            "finetune-0.1",
            "--text",
            "t",
            "--out",
            "m",
        ],
        vec![
            "train-toy",
            "--train",
            "s/train.jsonl",
            "--eval",
            "s/eval.jsonl",
            "--mode",
            "no-tags",
            "--out",
            "n",
        ],
        vec![
            "eval",
            "--pred",
            "m/predictions.jsonl",
            "--gt",
            "s/eval_gt.jsonl",
            "--out",
            "v",
        ],
        vec![
            "augment",
            "--in",
            "x/frames.jsonl",
            "--element-drop-rate",
            "0.2",
            "--sigma-trans",
            "1",
            "--sigma-rot",
            "2",
            "--element-aug-rate",
            "0.5",
            "--tag-drop-rate",
            "0.6",
            "--out",
            "a",
        ],
        vec!["orf-check", "--n", "12", "--dorf", "16"],
    ];
    steps
        .iter()
        .map(|s| {
            let mut args = c.to_vec();
            args.extend(s);
            ok(dir, &args)
        })
        .collect()
}
