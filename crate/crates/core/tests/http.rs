mod common;

use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{header, Request, StatusCode};
use axum::Router;
use common::*;
use serde_json::Value;
use tower::ServiceExt;
use zkrollup_core::config::{Config, StoreBackend};
use zkrollup_core::{App, LatencyModel, ProofSystem};

async fn call(app: &Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Vec<(String, String)>, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header(header::CONTENT_TYPE, "application/json");
    }
    let resp = app.clone().oneshot(req.body(body.map(Body::from).unwrap_or_else(Body::empty)).unwrap()).await.unwrap();
    let status = resp.status();
    let headers = resp
        .headers()
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_str().unwrap_or("").to_string()))
        .collect();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let json = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, headers, json)
}

fn app(capacity: usize) -> App {
    let mut config = Config::default();
    config.pool.capacity = capacity;
    config.store.backend = StoreBackend::Memory;
    config.ledger = zkrollup_core::config::LedgerConfig::from_model(LatencyModel::INSTANT);
    App::build_with_proof(config, Arc::new(ProofSystem::reference())).unwrap()
}

#[tokio::test]
async fn submit_settle_and_query_over_http() {
    let app = app(100);
    let router = app.router();
    let mut ids = Vec::new();
    for tx in txs(20, 5) {
        let (status, _, body) = call(&router, "POST", "/submit", Some(serde_json::to_string(&tx).unwrap())).await;
        assert_eq!(status, StatusCode::ACCEPTED);
        ids.push(body["id"].as_u64().unwrap());
    }
    let (_, _, pool) = call(&router, "GET", "/pool", None).await;
    assert_eq!(pool["pending"].as_array().unwrap().len(), 5);

    let (status, _, _) = call(&router, "GET", "/batch/1", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    app.sequencer.settle_once().await.unwrap();
    let (status, _, batch) = call(&router, "GET", "/batch/1", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(batch["record"]["status"], "committed");
    assert_eq!(batch["record"]["merkleRoot"], batch["commitment"]["merkleRoot"]);
    let cid = batch["commitment"]["ipfsCid"].as_str().unwrap().to_string();

    let (status, _, payload) = call(&router, "GET", &format!("/ipfs/{cid}"), None).await;
    assert_eq!(status, StatusCode::OK);
    let got: Vec<u64> = payload["trackingIds"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    assert_eq!(got, ids);

    let (status, _, metrics) = call(&router, "GET", "/metrics", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(metrics["accepted"], 5);
    assert_eq!(metrics["batchesCommitted"], 1);
    assert_eq!(metrics["stages"]["proofGenMs"]["count"], 1);

    let (status, _, health) = call(&router, "GET", "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(health["lastCommittedBatch"], 1);
}

#[tokio::test]
async fn invalid_requests_are_400_and_leave_pool_alone() {
    let app = app(100);
    let router = app.router();
    for body in [
        "not json".to_string(),
        r#"{"assetId":"","participant":"p","assetCid":"bafkreigh2akiscaildcqabsyg3dfr6chu3fgpregiymsck7e7aqa4s52zy","clientTimestamp":1}"#.into(),
        r#"{"assetId":"DUMMY","participant":"p","assetCid":"bafkreigh2akiscaildcqabsyg3dfr6chu3fgpregiymsck7e7aqa4s52zy","clientTimestamp":1}"#.into(),
        r#"{"assetId":"a","participant":"p","assetCid":"nope","clientTimestamp":1}"#.into(),
        r#"{"assetId":"a","participant":"p","clientTimestamp":1}"#.into(),
    ] {
        let (status, _, err) = call(&router, "POST", "/submit", Some(body.clone())).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        assert!(err["error"].is_string());
        let (status, _, _) = call(&router, "POST", "/submit-direct", Some(body)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
    }
    assert!(app.sequencer.pool().is_empty());
    let (status, _, _) = call(&router, "GET", "/ipfs/garbage", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn full_pool_answers_503_with_retry_after() {
    let app = app(3);
    let router = app.router();
    let all = txs(21, 4);
    for tx in &all[..3] {
        let (status, _, _) = call(&router, "POST", "/submit", Some(serde_json::to_string(tx).unwrap())).await;
        assert_eq!(status, StatusCode::ACCEPTED);
    }
    let (status, headers, _) = call(&router, "POST", "/submit", Some(serde_json::to_string(&all[3]).unwrap())).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert!(headers.iter().any(|(k, v)| k == "retry-after" && v == "1"));
    app.sequencer.settle_once().await.unwrap();
    let (status, _, _) = call(&router, "POST", "/submit", Some(serde_json::to_string(&all[3]).unwrap())).await;
    assert_eq!(status, StatusCode::ACCEPTED);
}

#[tokio::test]
async fn direct_path_returns_receipts() {
    let app = app(10);
    let router = app.router();
    let tx = serde_json::to_string(&txs(22, 1)[0]).unwrap();
    let (status, _, receipt) = call(&router, "POST", "/submit-direct", Some(tx.clone())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(receipt["outcome"]["status"], "committed");
    let (status, _, receipt) = call(&router, "POST", "/submit-direct", Some(tx)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(receipt["outcome"]["status"], "rejected");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn serve_shuts_down_and_writes_block_log() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = Config::default();
    config.store.backend = StoreBackend::Memory;
    config.ledger = zkrollup_core::config::LedgerConfig::from_model(LatencyModel::INSTANT);
    config.ledger.block_log = Some(dir.path().join("blocks.jsonl"));
    config.settlement.interval_ms = 50;
    let app = App::build_with_proof(config, Arc::new(ProofSystem::reference())).unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(app.clone().serve(listener, async move {
        let _ = stopped.await;
    }));

    let client = reqwest::Client::new();
    for tx in txs(23, 3) {
        let r = client.post(format!("http://{addr}/submit")).json(&tx).send().await.unwrap();
        assert_eq!(r.status().as_u16(), 202);
    }
    let deadline = std::time::Instant::now() + std::time::Duration::from_secs(10);
    while app.sequencer.ledger().last_batch_number() < 1 && std::time::Instant::now() < deadline {
        tokio::time::sleep(std::time::Duration::from_millis(20)).await;
    }
    stop.send(()).unwrap();
    server.await.unwrap().unwrap();
    let file = std::fs::File::open(dir.path().join("blocks.jsonl")).unwrap();
    let blocks = zkrollup_core::ledger::read_block_log(std::io::BufReader::new(file)).unwrap();
    assert_eq!(blocks.len(), 1);
    let state = zkrollup_core::ledger::WorldState::replay(&blocks, 0).unwrap();
    assert_eq!(state.last_batch(), 1);
}
