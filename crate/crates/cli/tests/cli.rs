//! End-to-end runs of the `xlqa` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use xlqa_core::corpus::read_passages;
use xlqa_core::{DualEncoder, HashEncoder, Passage, Question};

fn xlqa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xlqa"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = xlqa(args);
    assert!(
        out.status.success(),
        "xlqa {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json_lines(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn ingest_matches_hand_segmentation() {
    let dir = tempfile::tempdir().unwrap();
    let passages = dir.path().join("passages.jsonl");
    let stats = ok(&[
        "ingest",
        s(&fixture("three_articles.jsonl")),
        "--out",
        s(&passages),
        "--ingest.max_tokens",
        "10",
        "--ingest.min_tokens=3",
    ]);
    assert_eq!(
        std::fs::read_to_string(&passages).unwrap(),
        std::fs::read_to_string(fixture("three_articles.passages.jsonl")).unwrap()
    );
    let stats: Value = serde_json::from_str(&stats).unwrap();
    assert_eq!(stats["languages"]["en"]["passages"], 3);
    assert_eq!(stats["languages"]["ja"]["passages"], 1);
    assert_eq!(stats["languages"]["ja"]["filtered"], 1);
    assert_eq!(stats["languages"]["fi"]["passages"], 0);
    assert_eq!(stats["dropped_short"], 1);
    assert_eq!(stats["dropped_disambiguation"], 1);
}

fn toy_world(dir: &Path) -> PathBuf {
    ok(&["toy-world", "--out", s(dir), "--toy.entities", "30"]);
    dir.join("pipeline.toml")
}

fn brute_force_top1(encoder: &HashEncoder, passages: &[Passage], q: &Question) -> (String, f64) {
    let qv = encoder.encode_question(q).unwrap();
    let mut best: Option<(String, f64)> = None;
    for p in passages {
        let pv = encoder.encode_passage(p).unwrap();
        let mut score = 0.0f64;
        for (a, b) in qv.as_slice().iter().zip(pv.as_slice()) {
            score += f64::from(*a) * f64::from(*b);
        }
        let better = match &best {
            None => true,
            Some((id, s)) => score > *s || (score == *s && p.passage_id < *id),
        };
        if better {
            best = Some((p.passage_id.clone(), score));
        }
    }
    best.unwrap()
}

#[test]
fn retrieve_top1_matches_brute_force() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_world(dir.path());
    let c = s(&cfg);
    let hash = ["--encoder", "toy-hash", "--encoder.dim", "16", "--seed", "5"];
    ok(&["--config", c, "ingest"]);
    ok(&[&["--config", c, "embed", "--out", s(&dir.path().join("hash.idx"))][..], &hash].concat());
    let out = dir.path().join("top1.jsonl");
    ok(&[
        &["--config", c, "retrieve", "--k", "1", "--paths.index", s(&dir.path().join("hash.idx"))][..],
        &["--out", s(&out)],
        &hash,
    ]
    .concat());

    let passages = read_passages(std::fs::File::open(dir.path().join("passages.jsonl")).map(std::io::BufReader::new).unwrap()).unwrap();
    let questions: Vec<Question> = json_lines(&dir.path().join("questions.jsonl"))
        .into_iter()
        .map(|v| serde_json::from_value(v).unwrap())
        .collect();
    let encoder = HashEncoder::new(16, 5).unwrap();
    let rows = json_lines(&out);
    assert_eq!(rows.len(), questions.len());
    for (row, q) in rows.iter().zip(&questions) {
        assert_eq!(row["question_id"], q.question_id.as_str());
        let results = row["results"].as_array().unwrap();
        assert_eq!(results.len(), 1);
        let (id, score) = brute_force_top1(&encoder, &passages, q);
        assert_eq!(results[0][0], id.as_str(), "{}", q.question_id);
        assert!((results[0][1].as_f64().unwrap() - score).abs() < 1e-9);
    }
}

#[test]
fn pipeline_reruns_are_byte_identical_and_compose() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_world(dir.path());
    let c = s(&cfg);
    let fast = ["--train.epochs", "10"];
    let outputs = [
        "passages.jsonl",
        "training_set.jsonl",
        "mining_state.json",
        "encoder.bin",
        "passages.idx",
        "predictions.jsonl",
        "retrievals.jsonl",
        "report.json",
    ];
    let mut runs = Vec::new();
    for _ in 0..2 {
        ok(&["--config", c, "ingest"]);
        let ledger = ok(&[&["--config", c, "mine"][..], &fast].concat());
        assert_eq!(ledger.lines().count(), 1, "one mining round for two training rounds");
        ok(&["--config", c, "embed"]);
        ok(&["--config", c, "answer"]);
        // Predictions from `answer` feed `eval` unchanged.
        let table = ok(&["--config", c, "eval"]);
        assert!(table.starts_with("lang\tcategory"), "{table}");
        assert!(table.lines().any(|l| l.starts_with("macro\t")));
        runs.push(
            outputs
                .iter()
                .map(|f| std::fs::read(dir.path().join(f)).unwrap())
                .collect::<Vec<_>>(),
        );
    }
    for (i, f) in outputs.iter().enumerate() {
        assert!(runs[0][i] == runs[1][i], "{f} differs between runs");
    }
    let report: Value = serde_json::from_slice(&runs[0][7]).unwrap();
    assert_eq!(report["questions"], 30);
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = xlqa(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_of(&out);
    assert!(err.starts_with("error[usage]: "), "{err}");
    assert!(err.contains("Usage:"), "{err}");
}

#[test]
fn help_exits_zero() {
    let out = xlqa(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("e2e-toy"));
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.jsonl");
    let passages = dir.path().join("p.jsonl");

    let out = xlqa(&["ingest", s(&missing), "--out", s(&passages)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).starts_with("error[data]: "));
    assert_eq!(stderr_of(&out).lines().count(), 1);
    assert!(!passages.exists());

    let out = xlqa(&["ingest", "--ingest.max_token", "3"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).starts_with("error[usage]: "));

    let out = xlqa(&["embed", "--encoder", "bert"]);
    assert_eq!(out.status.code(), Some(1));

    ok(&["ingest", s(&fixture("three_articles.jsonl")), "--out", s(&passages)]);
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    let out = xlqa(&[
        "embed",
        "--paths.passages",
        s(&passages),
        "--out",
        s(&dir.path().join("x.idx")),
        "--encoder",
        "remote",
        "--endpoint",
        &url,
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err = stderr_of(&out);
    assert!(err.starts_with("error[transport]: ") && err.contains(&url), "{err}");
}

#[test]
fn e2e_toy_prints_recall_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("e2e.json");
    let text = ok(&[
        "e2e-toy",
        "--toy.entities",
        "40",
        "--toy.epochs",
        "5",
        "--out",
        s(&report),
    ]);
    let rounds: Vec<&str> = text.lines().filter(|l| l.starts_with("round ")).collect();
    assert_eq!(rounds.len(), 3, "{text}");
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["rounds"].as_array().unwrap().len(), 2);
    assert!(v.get("seconds").is_none());
}
