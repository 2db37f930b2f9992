//! HTTP front end and process wiring.
//!
//! | route                 | success                   | errors                          |
//! |-----------------------|---------------------------|---------------------------------|
//! | `POST /submit`        | 202 `{"id": n}`           | 400 invalid, 503 pool full      |
//! | `POST /submit-direct` | 200 ledger receipt        | 400 invalid, 409 rejected       |
//! | `GET /batch/{n}`      | 200 record + commitment   | 404                             |
//! | `GET /health`         | 200                       |                                 |
//! | `GET /metrics`        | 200 counters and timings  |                                 |
//! | `GET /pool`           | 200 pending/in-flight ids |                                 |
//! | `GET /ipfs/{cid}`     | 200 stored payload bytes  | 400 bad CID, 404                |

use std::fs::{File, OpenOptions};
use std::future::Future;
use std::io::BufWriter;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::json;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::watch;

use crate::cid::Cid;
use crate::config::{Config, StoreBackend};
use crate::ledger::live::LiveLedger;
use crate::ledger::{LedgerError, Outcome};
use crate::pool::{PoolError, TxPool};
use crate::proof::{ProofError, ProofSystem};
use crate::sequencer::{Sequencer, SequencerOptions, SubmitError};
use crate::store::{BlobStore, IpfsHttpStore, LocalStore, MemoryStore, StoreError};
use crate::tx::{Transaction, MAX_BATCH};

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("pool: {0}")]
    Pool(#[from] PoolError),
    #[error("store: {0}")]
    Store(#[from] StoreError),
    #[error("proof system: {0}")]
    Proof(#[from] ProofError),
    #[error("ledger: {0}")]
    Ledger(#[from] LedgerError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Everything a running service owns.
#[derive(Clone)]
pub struct App {
    pub config: Config,
    pub sequencer: Arc<Sequencer>,
    pub ledger: LiveLedger,
    pub proof: Arc<ProofSystem>,
}

impl App {
    /// Builds pool, store, proof system, ledger and sequencer from config.
    /// Must run inside a tokio runtime (the ledger driver is spawned).
    pub fn build(config: Config) -> Result<App, BuildError> {
        let proof = Arc::new(ProofSystem::setup(config.proof.backend, config.proof.seed)?);
        Self::build_with_proof(config, proof)
    }

    pub fn build_with_proof(config: Config, proof: Arc<ProofSystem>) -> Result<App, BuildError> {
        let pool = Arc::new(match &config.pool.journal {
            Some(path) => TxPool::open(path, config.pool.capacity, MAX_BATCH)?,
            None => TxPool::new(config.pool.capacity, MAX_BATCH),
        });
        let store: Arc<dyn BlobStore> = match config.store.backend {
            StoreBackend::Local => Arc::new(LocalStore::open(&config.store.dir)?),
            StoreBackend::Memory => Arc::new(MemoryStore::new()),
            StoreBackend::Ipfs => Arc::new(IpfsHttpStore::new(
                config.store.ipfs_api.clone().unwrap_or_default(),
            )?),
        };
        let ledger = LiveLedger::start(config.ledger.model(), proof.clone())?;
        let options = SequencerOptions {
            settle_interval: Duration::from_millis(config.settlement.interval_ms),
            max_retries: config.settlement.max_retries,
        };
        let mut sequencer = Sequencer::new(pool, proof.clone(), store, Arc::new(ledger.clone()), options);
        if let Some(path) = &config.settlement.log {
            let file = OpenOptions::new().create(true).append(true).open(path)?;
            sequencer = sequencer.with_log(Box::new(BufWriter::new(file)));
        }
        Ok(App { config, sequencer: Arc::new(sequencer), ledger, proof })
    }

    pub fn router(&self) -> Router {
        router(self.sequencer.clone())
    }

    /// Serves HTTP and runs the settlement worker until `shutdown` resolves.
    /// In-flight requests finish; the block log is written if configured.
    pub async fn serve(
        self,
        listener: TcpListener,
        shutdown: impl Future<Output = ()> + Send + 'static,
    ) -> std::io::Result<()> {
        let (stop_tx, stop_rx) = watch::channel(false);
        let worker = {
            let mut rx = stop_rx.clone();
            let seq = self.sequencer.clone();
            tokio::spawn(seq.run(async move {
                let _ = rx.wait_for(|s| *s).await;
            }))
        };
        let mut http_rx = stop_rx;
        let server = axum::serve(listener, self.router()).with_graceful_shutdown(async move {
            let _ = http_rx.wait_for(|s| *s).await;
        });
        tokio::spawn(async move {
            shutdown.await;
            let _ = stop_tx.send(true);
        });
        server.await?;
        let _ = worker.await;
        if let Some(path) = &self.config.ledger.block_log {
            let file = BufWriter::new(File::create(path)?);
            self.ledger.with_core(|core| core.export_block_log(file))?;
        }
        Ok(())
    }
}

pub fn router(sequencer: Arc<Sequencer>) -> Router {
    Router::new()
        .route("/submit", post(submit))
        .route("/submit-direct", post(submit_direct))
        .route("/batch/{n}", get(batch))
        .route("/health", get(health))
        .route("/metrics", get(metrics))
        .route("/pool", get(pool))
        .route("/ipfs/{cid}", get(ipfs))
        .with_state(sequencer)
}

fn error(status: StatusCode, message: impl ToString) -> Response {
    (status, Json(json!({ "error": message.to_string() }))).into_response()
}

fn parse_tx(body: &[u8]) -> Result<Transaction, Response> {
    serde_json::from_slice(body).map_err(|e| error(StatusCode::BAD_REQUEST, e))
}

async fn submit(State(seq): State<Arc<Sequencer>>, body: Bytes) -> Response {
    let tx = match parse_tx(&body) {
        Ok(tx) => tx,
        Err(r) => return r,
    };
    match seq.submit(tx) {
        Ok(id) => (StatusCode::ACCEPTED, Json(json!({ "id": id }))).into_response(),
        Err(SubmitError::Invalid(e)) => error(StatusCode::BAD_REQUEST, e),
        Err(SubmitError::Pool(e @ PoolError::Full { .. })) => {
            let mut r = error(StatusCode::SERVICE_UNAVAILABLE, e);
            r.headers_mut().insert(header::RETRY_AFTER, HeaderValue::from_static("1"));
            r
        }
        Err(SubmitError::Pool(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}

async fn submit_direct(State(seq): State<Arc<Sequencer>>, body: Bytes) -> Response {
    let tx = match parse_tx(&body) {
        Ok(tx) => tx,
        Err(r) => return r,
    };
    match seq.submit_direct(tx).await {
        Ok(receipt) => {
            let status = match &receipt.outcome {
                Outcome::Committed { .. } => StatusCode::OK,
                Outcome::Rejected { .. } => StatusCode::CONFLICT,
            };
            (status, Json(receipt)).into_response()
        }
        Err(e) => error(StatusCode::BAD_REQUEST, e),
    }
}

async fn batch(State(seq): State<Arc<Sequencer>>, Path(n): Path<u64>) -> Response {
    match seq.get_batch(n) {
        Some(view) => Json(view).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("batch {n} not found")),
    }
}

async fn health(State(seq): State<Arc<Sequencer>>) -> Response {
    Json(json!({
        "status": "ok",
        "lastCommittedBatch": seq.ledger().last_batch_number(),
        "pending": seq.pool().pending_len(),
    }))
    .into_response()
}

async fn metrics(State(seq): State<Arc<Sequencer>>) -> Response {
    Json(seq.metrics()).into_response()
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct PoolView {
    pending: Vec<u64>,
    in_flight: Vec<u64>,
    dead_letter: Vec<u64>,
}

async fn pool(State(seq): State<Arc<Sequencer>>) -> Response {
    let p = seq.pool();
    Json(PoolView {
        pending: p.pending_ids(),
        in_flight: p.in_flight_ids(),
        dead_letter: p.dead_letter_ids(),
    })
    .into_response()
}

async fn ipfs(State(seq): State<Arc<Sequencer>>, Path(cid): Path<String>) -> Response {
    let cid: Cid = match cid.parse() {
        Ok(c) => c,
        Err(e) => return error(StatusCode::BAD_REQUEST, e),
    };
    let store = seq.store().clone();
    match tokio::task::spawn_blocking(move || store.get(&cid)).await {
        Ok(Ok(bytes)) => ([(header::CONTENT_TYPE, "application/json")], bytes).into_response(),
        Ok(Err(StoreError::NotFound(c))) => error(StatusCode::NOT_FOUND, format!("{c} not found")),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}
