#![allow(dead_code)]

use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

pub const BIN: &str = env!("CARGO_BIN_EXE_endcold");

/// Runs the binary in `dir`, feeding `stdin` when given.
pub fn run_in(dir: &Path, args: &[&str], stdin: Option<&[u8]>) -> Output {
    let mut child = Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env_remove("RUST_LOG")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("spawn endcold");
    {
        let mut pipe = child.stdin.take().unwrap();
        if let Some(bytes) = stdin {
            pipe.write_all(bytes).unwrap();
        }
    }
    child.wait_with_output().unwrap()
}

/// Like [`run_in`] but panics unless the command exits 0.
pub fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run_in(dir, args, None);
    assert!(
        out.status.success(),
        "endcold {args:?} exited {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub const ROUTE_BATCH: &str = concat!(
    "{\"tags\":[\"t1\",\"t2\"],\"asker\":\"u3\",\"candidates\":[\"u0\",\"u1\",\"u2\",\"u5\",\"stranger\"]}\n",
    "{\"tags\":[\"t0\"],\"candidates\":[\"u4\",\"u6\",\"u7\"]}\n",
    "{\"tags\":[\"nope\"],\"candidates\":[\"u4\"]}\n",
);

/// Every training and routing command at small scale with `--threads 1`.
/// Returns the produced files and captured stdout, by name.
pub fn pipeline(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let t = ["--threads", "1"];
    let small = ["--epochs", "3", "--hidden", "8,8,4", "--seed", "3"];
    let steps: Vec<Vec<&str>> = vec![
        vec![
            "synth-gen",
            "--users",
            "40",
            "--questions",
            "300",
            "--tags",
            "10",
            "--topic-dim",
            "4",
            "--seed",
            "3",
            "--out",
            "raw.jsonl",
            "--truth",
            "truth.json",
        ],
        vec![
            "ingest",
            "--input",
            "raw.jsonl",
            "--output",
            "data.txt",
            "--test-fraction",
            "0.2",
            "--seed",
            "3",
        ],
        vec!["build-graph", "--input", "data.txt", "--output", "graph.txt"],
        vec![
            "train-embed",
            "--graph",
            "graph.txt",
            "--out",
            "emb.txt",
            "--dim",
            "8",
            "--walk-length",
            "10",
            "--walks-per-node",
            "2",
            "--window",
            "3",
            "--seed",
            "3",
        ],
        [
            &["train-seq", "--emb", "emb.txt", "--cases", "data.txt", "--out", "seq.txt"][..],
            &small,
        ]
        .concat(),
        [
            &[
                "train-seq",
                "--emb",
                "emb.txt",
                "--cases",
                "data.txt",
                "--mode",
                "pairwise",
                "--out",
                "pair.txt",
            ][..],
            &small,
        ]
        .concat(),
        [
            &[
                "train-endcold",
                "--graph",
                "graph.txt",
                "--cases",
                "data.txt",
                "--dim",
                "8",
                "--out",
                "endcold.txt",
            ][..],
            &small,
        ]
        .concat(),
        vec![
            "route",
            "--model",
            "endcold.txt",
            "--data",
            "data.txt",
            "--graph",
            "graph.txt",
            "--input",
            "batch.jsonl",
            "--output",
            "route-endcold.jsonl",
        ],
        vec![
            "route",
            "--model",
            "seq.txt",
            "--data",
            "data.txt",
            "--emb",
            "emb.txt",
            "--tags",
            "t1,t3",
            "--asker",
            "u2",
            "--candidates",
            "u0,u1,u9",
        ],
        vec![
            "evaluate",
            "--model",
            "endcold.txt",
            "--data",
            "data.txt",
            "--graph",
            "graph.txt",
            "--split",
            "new",
            "--pool-size",
            "6",
            "--seed",
            "3",
            "--report",
            "eval-endcold.json",
        ],
        vec![
            "evaluate",
            "--model",
            "pair.txt",
            "--data",
            "data.txt",
            "--emb",
            "emb.txt",
            "--split",
            "existing",
            "--report",
            "eval-pair.json",
        ],
    ];
    std::fs::write(dir.join("batch.jsonl"), ROUTE_BATCH).unwrap();
    let mut artifacts = Vec::new();
    for (i, step) in steps.iter().enumerate() {
        let args = [&t[..], step].concat();
        let out = ok(dir, &args);
        artifacts.push((format!("stdout of step {i} ({})", step[0]), out.stdout));
    }
    for f in [
        "raw.jsonl",
        "truth.json",
        "data.txt",
        "graph.txt",
        "emb.txt",
        "seq.txt",
        "pair.txt",
        "endcold.txt",
        "route-endcold.jsonl",
        "eval-endcold.json",
        "eval-pair.json",
    ] {
        artifacts.push((f.to_string(), std::fs::read(dir.join(f)).unwrap()));
    }
    artifacts
}
