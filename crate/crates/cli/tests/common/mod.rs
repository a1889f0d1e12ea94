//! CLI helpers shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_msgcn");

pub const COMMANDS: [&str; 8] = [
    "synth",
    "build-graph",
    "cv",
    "train",
    "predict",
    "influence",
    "heatmap",
    "stats",
];

pub fn msgcn(args: &[&str], cwd: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

pub fn ok(args: &[&str], cwd: &Path) -> String {
    let out = msgcn(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub const SPEC: &str = r#"{"num_wsis": 12, "num_levels": 3, "level_magnifications": [1.0, 2.0, 4.0], "dim": 8, "grid_rows": 4, "grid_cols": 4}"#;
pub const RUN: &str = r#"{"train": {"epochs": 2, "folds": 2},
  "grid": {"learning_rates": [5e-4, 1e-3], "hidden_dims": [32], "dropouts": [0.25], "batch_sizes": [4]}}"#;

/// synth, build-graph, train, predict, influence and heatmap in `root`.
pub fn pipeline(root: &Path, seed: &str) {
    std::fs::write(root.join("spec.json"), SPEC).unwrap();
    std::fs::write(root.join("run.json"), RUN).unwrap();
    ok(
        &[
            "synth",
            "--task",
            "structure",
            "--seed",
            seed,
            "--out",
            "d",
            "--config",
            "spec.json",
        ],
        root,
    );
    ok(
        &[
            "build-graph",
            "--manifest",
            "d/tiles.jsonl",
            "--out",
            "d/graphs",
            "--threads",
            "2",
        ],
        root,
    );
    let echo = ok(
        &[
            "train",
            "--graphs",
            "d/graphs",
            "--labels",
            "d/labels.csv",
            "--seed",
            seed,
            "--config",
            "run.json",
            "--out",
            "m",
        ],
        root,
    );
    assert!(echo.contains("\"weight_decay\""), "resolved config echoed: {echo}");
    ok(
        &[
            "cv",
            "--graphs",
            "d/graphs",
            "--labels",
            "d/labels.csv",
            "--seed",
            seed,
            "--config",
            "run.json",
            "--out",
            "m",
        ],
        root,
    );
    ok(
        &[
            "predict",
            "--model",
            "m/model.msgp",
            "--graphs",
            "d/graphs",
            "--out",
            "pred.json",
            "--threads",
            "2",
        ],
        root,
    );
    ok(
        &[
            "influence",
            "--model",
            "m/model.msgp",
            "--graphs",
            "d/graphs",
            "--out",
            "influence.json",
        ],
        root,
    );
    ok(
        &[
            "heatmap",
            "--model",
            "m/model.msgp",
            "--graphs",
            "d/graphs",
            "--out",
            "hm",
        ],
        root,
    );
}

pub fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(root).unwrap().display().to_string(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}
