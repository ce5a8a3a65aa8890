use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use pinquery_core::index::Index;
use pinquery_core::SearchResult;
use pinquery_server::{AppState, BackgroundServer, ServerConfig};
use serde_json::Value;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pinquery"))
        .current_dir(dir)
        .args(args)
        .env_remove("PINQUERY_INDEX_DIR")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn lines(s: &str) -> Vec<Value> {
    s.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

/// demo corpus through build-index; returns the first corpus doc id.
fn flow(dir: &Path) -> String {
    ok(dir, &["demo", "corpus", "--out", "corpus.jsonl", "--docs", "600", "--clusters", "12", "--dim", "32"]);
    ok(dir, &["ingest", "--input", "corpus.jsonl", "--store", "store"]);
    ok(dir, &["calibrate-thresholds", "--store", "store"]);
    ok(dir, &["train-codebook", "--store", "store", "--k", "12"]);
    ok(dir, &["pipeline-run", "--store", "store", "--epoch", "1", "--shards", "2"]);
    ok(dir, &[
        "build-index",
        "--joins",
        "store/joins/epoch-1.jsonl",
        "--codebook",
        "store/codebook.pqcb",
        "--thresholds",
        "store/thresholds.json",
        "--shards",
        "3",
        "--out",
        "idx",
    ]);
    let first = std::fs::read_to_string(dir.join("corpus.jsonl")).unwrap();
    let v: Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    pinquery_core::doc_id_of(v["source_key"].as_str().unwrap()).unwrap().to_string()
}

#[test]
fn query_excludes_itself_and_ranks_by_score() {
    let tmp = tempfile::tempdir().unwrap();
    let doc = flow(tmp.path());
    let out = ok(tmp.path(), &["--format", "records", "query", "--index-dir", "idx", "--doc", &doc, "--k", "10"]);
    let results: Vec<SearchResult> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(results.len(), 10);
    assert!(results.iter().all(|r| r.doc_id.to_string() != doc));
    assert!(results.windows(2).all(|w| w[0].score >= w[1].score));

    let table = ok(tmp.path(), &["query", "--index-dir", "idx", "--doc", &doc, "--exact"]);
    assert!(table.starts_with("rank  doc_id"));
    assert_eq!(table.lines().count(), 11);
}

#[test]
fn second_epoch_run_extracts_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    flow(tmp.path());
    let out = ok(tmp.path(), &["--format", "records", "pipeline-run", "--store", "store", "--epoch", "2"]);
    let v = &lines(&out)[0];
    assert_eq!(v["joins"], 600);
    for n in v["manifest"]["extractions_performed"].as_object().unwrap().values() {
        assert_eq!(n, 0);
    }
}

#[test]
fn server_and_local_queries_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let doc = flow(tmp.path());
    let state = AppState::new(Index::load(&tmp.path().join("idx")).unwrap(), ServerConfig::default());
    let srv = BackgroundServer::start(Arc::new(state), "127.0.0.1:0".parse().unwrap()).unwrap();
    let base = srv.url("");
    for cmd in ["query", "neardup"] {
        let local = ok(tmp.path(), &["--format", "records", cmd, "--index-dir", "idx", "--doc", &doc]);
        let remote = ok(tmp.path(), &["--format", "records", cmd, "--server", &base, "--doc", &doc]);
        assert_eq!(local, remote, "{cmd}");
    }
}

#[test]
fn eval_retrieval_rows_and_columns() {
    let tmp = tempfile::tempdir().unwrap();
    flow(tmp.path());
    let out = ok(tmp.path(), &["eval-retrieval", "--index-dir", "idx", "--labels", "store", "--ks", "1,5"]);
    let mut it = out.lines();
    assert_eq!(it.next().unwrap().split_whitespace().collect::<Vec<_>>(), ["Model", "p@1", "p@5", "latency"]);
    assert!(it.next().unwrap().starts_with("token"));
    assert!(it.next().unwrap().starts_with("exact"));
    let quiet =
        ok(tmp.path(), &["--format", "records", "eval-retrieval", "--index-dir", "idx", "--labels", "store", "--no-latency"]);
    let rows = lines(&quiet);
    assert_eq!(rows.len(), 2);
    assert!(rows[0].get("mean_latency_ms").is_none());
    let exact_only = ok(tmp.path(), &["--format", "records", "eval-retrieval", "--index-dir", "idx", "--labels", "store", "--exact"]);
    assert_eq!(lines(&exact_only).len(), 1);
    assert_eq!(rows[0]["skipped"], 0);
}

#[test]
fn eval_detection_table() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["demo", "detection", "--out", "det", "--images", "300"]);
    let out = ok(tmp.path(), &["eval-detection", "--fixtures", "det"]);
    assert!(out.contains("Text") && out.contains("Img") && out.contains("Both"));
    assert!(out.lines().any(|l| l.starts_with("earrings")));
    assert!(out.lines().any(|l| l.starts_with("Average")));
}

#[test]
fn codebook_training_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    flow(tmp.path());
    ok(tmp.path(), &["train-codebook", "--store", "store", "--k", "12", "--out", "again.pqcb"]);
    let a = std::fs::read(tmp.path().join("store/codebook.pqcb")).unwrap();
    let b = std::fs::read(tmp.path().join("again.pqcb")).unwrap();
    assert_eq!(a, b);
    ok(tmp.path(), &["--seed", "8", "train-codebook", "--store", "store", "--k", "12", "--out", "other.pqcb"]);
    assert_ne!(a, std::fs::read(tmp.path().join("other.pqcb")).unwrap());
}

#[test]
fn bad_input_fails_with_message() {
    let tmp = tempfile::tempdir().unwrap();
    flow(tmp.path());
    let out = run(tmp.path(), &["query", "--index-dir", "idx", "--doc", "00000000000000ff"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    let out = run(tmp.path(), &["query", "--index-dir", "idx", "--doc", "nothex"]);
    assert!(!out.status.success());
    let out = run(tmp.path(), &["build-index", "--joins", "missing.jsonl", "--codebook", "x", "--thresholds", "y", "--out", "z"]);
    assert!(!out.status.success());
    let out = run(tmp.path(), &["train-codebook", "--store", "store", "--k", "0"]);
    assert!(!out.status.success());
}
