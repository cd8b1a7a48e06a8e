#![allow(dead_code)]

pub mod oracles;
pub mod standin;

use std::path::Path;
use std::process::Command;

use hiercat::hierarchy::{Hierarchy, HierarchyBuilder, NodeId};
use rand::Rng;

/// Random hierarchy with `levels` levels; every node has 1..=max_children children.
pub fn random_hierarchy(rng: &mut impl Rng, levels: usize, top: usize, max_children: usize) -> Hierarchy {
    let mut b = HierarchyBuilder::new(levels);
    let mut current: Vec<NodeId> = (0..top).map(|s| b.add_node(0, format!("n1_{s}"))).collect();
    for r in 1..levels {
        let mut next = Vec::new();
        for &p in &current {
            for _ in 0..rng.random_range(1..=max_children) {
                let id = b.add_node(r, format!("n{}_{}", r + 1, next.len()));
                b.link(id, p);
                next.push(id);
            }
        }
        current = next;
    }
    b.build().expect("valid random hierarchy")
}

/// `n` points drawn uniformly from the cube [-scale, scale]^dim.
pub fn random_points(rng: &mut impl Rng, n: usize, dim: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-scale..scale)).collect())
        .collect()
}

/// Relative error with an absolute floor for tiny magnitudes.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Runs the binary with `HIERCAT_THREADS` set and fails on a non-zero exit.
pub fn hiercat_with_threads(args: &[&str], dir: &Path, threads: usize) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_hiercat"))
        .args(args)
        .current_dir(dir)
        .env("HIERCAT_THREADS", threads.to_string())
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

/// Simulates, trains, reduces and runs a small experiment twice per thread
/// count and compares every produced file byte for byte. Returns the files
/// that differ.
pub fn determinism_check(per_leaf: usize, replicates: usize) -> Result<Vec<String>, String> {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let per_leaf = per_leaf.to_string();
    let replicates = replicates.to_string();
    let runs = [(1, "a"), (1, "b"), (4, "c"), (4, "d")];
    for (threads, tag) in runs {
        let d = root.path().join(tag);
        std::fs::create_dir_all(&d).map_err(|e| e.to_string())?;
        let steps: [Vec<&str>; 4] = [
            vec![
                "simulate",
                "--scenario",
                "h_only-gaussian",
                "--per-leaf",
                &per_leaf,
                "--seed",
                "9",
                "--out",
                "sim",
            ],
            vec![
                "train-embed",
                "--data",
                "sim/outputs/data.csv",
                "--hierarchy",
                "sim/outputs/hierarchy.csv",
                "--out",
                "emb",
            ],
            vec![
                "reduce",
                "--hierarchy",
                "sim/outputs/hierarchy.csv",
                "--embeddings",
                "emb/outputs/embeddings.csv",
                "--si-star",
                "0.7",
                "--seed",
                "3",
                "--out",
                "red",
            ],
            vec![
                "experiment",
                "--scenario",
                "h_only-poisson",
                "--per-leaf",
                &per_leaf,
                "--replicates",
                &replicates,
                "--init-seeds",
                "1,2",
                "--seed",
                "4",
                "--out",
                "exp",
            ],
        ];
        for args in &steps {
            hiercat_with_threads(args, &d, threads)?;
        }
    }
    let files = [
        "sim/outputs/data.csv",
        "emb/outputs/embeddings.csv",
        "emb/outputs/network.json",
        "red/outputs/reduced.json",
        "red/trace/reduce.jsonl",
        "exp/outputs/runs.csv",
        "exp/outputs/summary.json",
    ];
    let read = |tag: &str, f: &str| std::fs::read(root.path().join(tag).join(f)).map_err(|e| format!("{f}: {e}"));
    let mut differ = Vec::new();
    for f in files {
        let first = read("a", f)?;
        for (_, tag) in &runs[1..] {
            if read(tag, f)? != first {
                differ.push(format!("{tag}/{f}"));
            }
        }
    }
    Ok(differ)
}
