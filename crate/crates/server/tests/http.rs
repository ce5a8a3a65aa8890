use std::sync::Arc;

use pinquery_core::demo::{clustered_corpus, CorpusConfig};
use pinquery_core::evalkit::{index_records, IndexConfig};
use pinquery_core::index::Index;
use pinquery_core::ImageRecord;
use pinquery_server::{AppState, BackgroundServer, Health, ServerConfig};
use reqwest::blocking::Client;
use serde_json::{json, Value};

fn corpus(docs: usize, seed: u64) -> Vec<ImageRecord> {
    clustered_corpus(&CorpusConfig { docs, clusters: 8, dim: 32, seed, ..Default::default() }).unwrap().records
}

fn index(recs: &[ImageRecord]) -> Index {
    index_records(recs, &IndexConfig { codebook_k: 8, shard_count: 3, ..Default::default() }).unwrap()
}

fn start(recs: &[ImageRecord]) -> BackgroundServer {
    let state = Arc::new(AppState::new(index(recs), ServerConfig::default()));
    BackgroundServer::start(state, "127.0.0.1:0".parse().unwrap()).unwrap()
}

#[test]
fn endpoints_answer() {
    let recs = corpus(300, 1);
    let srv = start(&recs);
    let client = Client::new();

    let health: Health = client.get(srv.url("/v1/health")).send().unwrap().json().unwrap();
    assert_eq!((health.status.as_str(), health.shards, health.docs, health.epoch), ("ok", 3, 300, 1));

    let id = recs[4].doc_id.to_string();
    let resp: Value = client
        .post(srv.url("/v1/search"))
        .json(&json!({"doc_id": id, "k": 10, "params": {"exact_mode": true}}))
        .send()
        .unwrap()
        .json()
        .unwrap();
    let results = resp["results"].as_array().unwrap();
    assert_eq!(results.len(), 10);
    let scores: Vec<f64> = results.iter().map(|r| r["score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    assert_eq!(resp["partial"], false);
    assert_eq!(resp["params_used"]["exact_mode"], true);
    assert_eq!(resp["params_used"]["w_v"], 0.8);

    let online: Value = client
        .post(srv.url("/v1/search"))
        .json(&json!({"embedding": recs[4].embedding, "annotations": ["Linen"], "k": 3}))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(online["results"].as_array().unwrap().len(), 3);

    let nd: Value = client
        .post(srv.url("/v1/neardup"))
        .json(&json!({"doc_id": id, "k": 10, "max_norm_hamming": 1.0, "min_token_match_frac": 0.0}))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(nd["results"].as_array().unwrap().len(), 10);

    let rp: Value = client
        .post(srv.url("/v1/related_pins"))
        .json(&json!({"doc_id": id, "k": 5}))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(rp["source_tag"], "visual");
}

#[test]
fn errors_are_json() {
    let srv = start(&corpus(100, 2));
    let client = Client::new();
    let missing = client.post(srv.url("/v1/search")).json(&json!({"doc_id": "0000000000000001", "k": 5})).send().unwrap();
    assert_eq!(missing.status(), 404);
    assert!(missing.json::<Value>().unwrap()["error"].as_str().unwrap().contains("not indexed"));
    let bad = client.post(srv.url("/v1/search")).body("{nope").send().unwrap();
    assert_eq!(bad.status(), 400);
    let zero = client.post(srv.url("/v1/search")).json(&json!({"doc_id": "0000000000000001", "k": 0})).send().unwrap();
    assert_eq!(zero.status(), 400);
    let weights = client
        .post(srv.url("/v1/search"))
        .json(&json!({"embedding": vec![0.0; 32], "k": 5, "params": {"w_v": 0.3}}))
        .send()
        .unwrap();
    assert_eq!(weights.status(), 400);
}

#[test]
fn index_swap_between_requests() {
    let first = corpus(100, 3);
    let state = Arc::new(AppState::new(index(&first), ServerConfig::default()));
    let srv = BackgroundServer::start(Arc::clone(&state), "127.0.0.1:0".parse().unwrap()).unwrap();
    let client = Client::new();
    let docs = |c: &Client| c.get(srv.url("/v1/health")).send().unwrap().json::<Health>().unwrap().docs;
    assert_eq!(docs(&client), 100);
    state.replace(index(&corpus(250, 4)));
    assert_eq!(docs(&client), 250);
}

#[test]
fn corrupt_index_refused() {
    let dir = tempfile::tempdir().unwrap();
    index(&corpus(80, 5)).save(dir.path()).unwrap();
    assert!(AppState::load(dir.path(), ServerConfig::default()).is_ok());
    let path = dir.path().join("shard-0002.pqix");
    let mut bytes = std::fs::read(&path).unwrap();
    let n = bytes.len();
    bytes[n / 2] ^= 0xff;
    std::fs::write(&path, bytes).unwrap();
    let err = AppState::load(dir.path(), ServerConfig::default()).err().unwrap();
    assert!(err.to_string().contains("shard-0002"), "{err}");
}
