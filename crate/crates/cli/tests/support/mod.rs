#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hyqr_core::kg::{KnowledgeGraph, Split};
use hyqr_core::synthetic::{synthetic_graph, SyntheticConfig};

pub fn hyqr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hyqr"))
        .args(args)
        .output()
        .expect("spawn hyqr")
}

/// Runs `hyqr` and panics with its stderr unless it exits 0.
pub fn ok(args: &[&str]) -> String {
    let out = hyqr(args);
    assert!(
        out.status.success(),
        "hyqr {args:?} failed ({:?}): {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 stdout")
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Writes the three split files of a synthetic graph under `dir`.
pub fn write_synthetic(dir: &Path, cfg: &SyntheticConfig) -> KnowledgeGraph {
    let g = synthetic_graph(cfg).expect("synthetic graph");
    std::fs::create_dir_all(dir).unwrap();
    for split in Split::ALL {
        g.write_split_tsv(split, &dir.join(format!("{}.tsv", split.name()))).unwrap();
    }
    g
}

/// ingest → gen-queries (train and test) → train → eval, all under `root`.
/// Returns the output paths in pipeline order.
pub fn pipeline(root: &Path, cfg: &SyntheticConfig, seed: &str, epochs: &str) -> Vec<PathBuf> {
    let raw = root.join("raw");
    write_synthetic(&raw, cfg);
    let graph = root.join("graph");
    ok(&[
        "ingest",
        "--train",
        s(&raw.join("train.tsv")),
        "--valid",
        s(&raw.join("valid.tsv")),
        "--test",
        s(&raw.join("test.tsv")),
        "--out",
        s(&graph),
    ]);
    let train_q = root.join("train.jsonl");
    ok(&[
        "gen-queries", "--graph", s(&graph), "--structures", "1p,2p,2i", "-n", "20", "--split", "train",
        "--seed", seed, "--out", s(&train_q),
    ]);
    let test_q = root.join("test.jsonl");
    ok(&[
        "gen-queries", "--graph", s(&graph), "--structures", "1p,2i,2u", "-n", "10", "--split", "test",
        "--seed", seed, "--out", s(&test_q),
    ]);
    let run = root.join("run");
    ok(&[
        "--threads", "1", "train", "--graph", s(&graph), "--queries", s(&train_q), "--out", s(&run), "--dim", "16",
        "--layers", "2", "--epochs", epochs, "--seed", seed,
    ]);
    let eval = root.join("eval");
    let metrics = ok(&[
        "--threads", "1", "eval", "--graph", s(&graph), "--queries", s(&test_q), "--checkpoint",
        s(&run.join("model.hyqr")), "--out", s(&eval),
    ]);
    std::fs::write(root.join("stdout_metrics.json"), metrics).unwrap();
    let mut paths = vec![train_q, test_q, run.join("model.hyqr"), run.join("loss.csv")];
    for e in 1..=epochs.parse::<usize>().unwrap() {
        paths.push(run.join("checkpoints").join(format!("epoch_{e:03}.hyqr")));
    }
    paths.extend([eval.join("metrics.json"), eval.join("ranks.tsv"), root.join("stdout_metrics.json")]);
    paths
}

pub fn small_config() -> SyntheticConfig {
    SyntheticConfig {
        entities: 50,
        clusters: 5,
        ..SyntheticConfig::default()
    }
}
