//! Ingestion and settlement.
//!
//! `submit` validates and enqueues without touching the prover or the ledger.
//! A single settlement worker repeatedly runs [`Sequencer::settle_once`]:
//! seal up to 32 pending transactions, pad, build the tree, prove, store the
//! payload, and commit the batch metadata on the ledger. A failed stage puts
//! the transactions back at the head of the pool and the same batch number is
//! retried; after `max_retries` failed attempts the transactions are moved to
//! the dead-letter set instead.

use std::collections::BTreeMap;
use std::future::Future;
use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::time::MissedTickBehavior;

use crate::cid::Cid;
use crate::field::FieldElement;
use crate::ledger::live::LedgerClient;
use crate::ledger::{BatchCommitment, BatchSubmission, LedgerCall, Outcome, Receipt};
use crate::merkle::MerkleTree32;
use crate::pool::{PoolEntry, PoolError, TxPool};
use crate::proof::{BackendTag, BatchProver, RollupStatement};
use crate::stats::Summary;
use crate::store::{BatchPayload, BlobStore};
use crate::tx::{pad_batch, BatchDraft, Transaction, TxError, MAX_BATCH};

pub fn epoch_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default().as_millis() as u64
}

#[derive(Debug, Error)]
pub enum SubmitError {
    #[error("invalid transaction: {0}")]
    Invalid(#[from] TxError),
    #[error("{0}")]
    Pool(#[from] PoolError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SettlementStatus {
    Sealed,
    Proved,
    Stored,
    Committed,
    Failed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Stage {
    Seal,
    Prove,
    Store,
    L1Commit,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Seal => "seal",
            Stage::Prove => "prove",
            Stage::Store => "store",
            Stage::L1Commit => "l1Commit",
        })
    }
}

/// One settlement attempt. Timings are wall-clock milliseconds per stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SettlementRecord {
    pub batch_number: u64,
    pub attempt: u32,
    pub real_count: usize,
    pub merkle_root: Option<FieldElement>,
    pub cid: Option<Cid>,
    pub proof_backend: Option<BackendTag>,
    pub proof_gen_ms: Option<f64>,
    pub upload_ms: Option<f64>,
    pub l1_commit_ms: Option<f64>,
    pub status: SettlementStatus,
    pub failed_stage: Option<Stage>,
    pub error: Option<String>,
    /// True when this failure exhausted the retry budget.
    pub dead_lettered: bool,
    pub started_at: u64,
    pub finished_at: u64,
    pub tracking_ids: Vec<u64>,
}

impl SettlementRecord {
    fn new(batch_number: u64, attempt: u32, entries: &[PoolEntry]) -> Self {
        SettlementRecord {
            batch_number,
            attempt,
            real_count: entries.len(),
            merkle_root: None,
            cid: None,
            proof_backend: None,
            proof_gen_ms: None,
            upload_ms: None,
            l1_commit_ms: None,
            status: SettlementStatus::Sealed,
            failed_stage: None,
            error: None,
            dead_lettered: false,
            started_at: epoch_ms(),
            finished_at: 0,
            tracking_ids: entries.iter().map(|e| e.id).collect(),
        }
    }

    /// Status only moves forward, or to failed from any earlier stage.
    pub fn advance(&mut self, to: SettlementStatus) {
        assert!(
            self.status != SettlementStatus::Committed
                && self.status != SettlementStatus::Failed
                && (to > self.status),
            "illegal settlement transition {:?} -> {to:?}",
            self.status
        );
        self.status = to;
    }

    fn fail(&mut self, stage: Stage, error: impl ToString) {
        self.advance(SettlementStatus::Failed);
        self.failed_stage = Some(stage);
        self.error = Some(error.to_string());
    }
}

/// A sealed batch with everything derived from its transactions.
#[derive(Clone, Debug)]
pub struct PreparedBatch {
    pub draft: BatchDraft,
    pub root: FieldElement,
    pub payload: BatchPayload,
}

impl PreparedBatch {
    pub fn statement(&self) -> RollupStatement {
        RollupStatement::new(self.root, self.draft.leaves)
    }
}

/// Pads, builds the tree and assembles the off-chain payload.
pub fn prepare_batch(
    batch_number: u64,
    entries: &[PoolEntry],
    created_at: u64,
) -> Result<PreparedBatch, TxError> {
    let txs: Vec<Transaction> = entries.iter().map(|e| e.tx.clone()).collect();
    let draft = pad_batch(&txs)?;
    let root = MerkleTree32::build(&draft.leaves).expect("padded to 32 leaves").root();
    let payload = BatchPayload {
        batch_number,
        real_count: draft.real_count,
        created_at,
        tracking_ids: entries.iter().map(|e| e.id).collect(),
        transactions: txs,
    };
    Ok(PreparedBatch { draft, root, payload })
}

#[derive(Clone, Debug)]
pub struct SequencerOptions {
    pub settle_interval: Duration,
    pub max_retries: u32,
}

impl Default for SequencerOptions {
    fn default() -> Self {
        SequencerOptions { settle_interval: Duration::from_millis(2000), max_retries: 5 }
    }
}

#[derive(Debug, Default)]
struct Counters {
    accepted: AtomicU64,
    rejected_invalid: AtomicU64,
    rejected_full: AtomicU64,
    direct_committed: AtomicU64,
    direct_rejected: AtomicU64,
    batches_committed: AtomicU64,
    batches_failed: AtomicU64,
    txs_settled: AtomicU64,
    txs_dead_lettered: AtomicU64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StageSummaries {
    pub proof_gen_ms: Summary,
    pub upload_ms: Summary,
    pub l1_commit_ms: Summary,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MetricsSnapshot {
    pub accepted: u64,
    pub rejected_invalid: u64,
    pub rejected_full: u64,
    pub direct_committed: u64,
    pub direct_rejected: u64,
    pub batches_committed: u64,
    pub batches_failed: u64,
    pub txs_settled: u64,
    pub txs_dead_lettered: u64,
    pub pool: crate::pool::PoolStats,
    pub last_committed_batch: u64,
    pub ledger_blocks: usize,
    pub stages: StageSummaries,
}

/// Sequencer record joined with the on-chain commitment.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BatchView {
    pub record: Option<SettlementRecord>,
    pub commitment: Option<BatchCommitment>,
}

struct Cursor {
    next_batch: u64,
    attempts: u32,
}

pub struct Sequencer {
    pool: Arc<TxPool>,
    prover: Arc<dyn BatchProver>,
    store: Arc<dyn BlobStore>,
    ledger: Arc<dyn LedgerClient>,
    options: SequencerOptions,
    cursor: tokio::sync::Mutex<Cursor>,
    latest: RwLock<BTreeMap<u64, SettlementRecord>>,
    history: Mutex<Vec<SettlementRecord>>,
    log: Option<Mutex<Box<dyn Write + Send>>>,
    counters: Counters,
}

impl std::fmt::Debug for Sequencer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Sequencer").field("pool", &self.pool).field("options", &self.options).finish()
    }
}

impl Sequencer {
    pub fn new(
        pool: Arc<TxPool>,
        prover: Arc<dyn BatchProver>,
        store: Arc<dyn BlobStore>,
        ledger: Arc<dyn LedgerClient>,
        options: SequencerOptions,
    ) -> Self {
        let next_batch = ledger.last_batch_number() + 1;
        Sequencer {
            pool,
            prover,
            store,
            ledger,
            options,
            cursor: tokio::sync::Mutex::new(Cursor { next_batch, attempts: 0 }),
            latest: RwLock::new(BTreeMap::new()),
            history: Mutex::new(Vec::new()),
            log: None,
            counters: Counters::default(),
        }
    }

    /// Settlement records are also written here, one JSON object per line.
    pub fn with_log(mut self, sink: Box<dyn Write + Send>) -> Self {
        self.log = Some(Mutex::new(sink));
        self
    }

    pub fn pool(&self) -> &Arc<TxPool> {
        &self.pool
    }

    pub fn ledger(&self) -> &dyn LedgerClient {
        self.ledger.as_ref()
    }

    pub fn store(&self) -> &Arc<dyn BlobStore> {
        &self.store
    }

    pub fn options(&self) -> &SequencerOptions {
        &self.options
    }

    /// Validates and enqueues. Never waits on settlement.
    pub fn submit(&self, tx: Transaction) -> Result<u64, SubmitError> {
        if let Err(e) = tx.validate() {
            self.counters.rejected_invalid.fetch_add(1, Ordering::Relaxed);
            return Err(e.into());
        }
        match self.pool.push(tx) {
            Ok(id) => {
                self.counters.accepted.fetch_add(1, Ordering::Relaxed);
                Ok(id)
            }
            Err(e) => {
                if matches!(e, PoolError::Full { .. }) {
                    self.counters.rejected_full.fetch_add(1, Ordering::Relaxed);
                }
                Err(e.into())
            }
        }
    }

    /// Creates the asset directly on the ledger and waits for the commit.
    pub async fn submit_direct(&self, tx: Transaction) -> Result<Receipt, SubmitError> {
        tx.validate()?;
        let receipt = self.ledger.submit(LedgerCall::create_asset(&tx)).await;
        let counter = if receipt.is_committed() {
            &self.counters.direct_committed
        } else {
            &self.counters.direct_rejected
        };
        counter.fetch_add(1, Ordering::Relaxed);
        Ok(receipt)
    }

    /// Settles at most one batch. `None` when nothing is pending.
    pub async fn settle_once(&self) -> Option<SettlementRecord> {
        let mut cursor = self.cursor.lock().await;
        let entries = self.pool.take(MAX_BATCH);
        if entries.is_empty() {
            return None;
        }
        let batch_number = cursor.next_batch;
        let mut record = SettlementRecord::new(batch_number, cursor.attempts + 1, &entries);
        let outcome = self.run_stages(batch_number, &entries, &mut record).await;
        record.finished_at = epoch_ms();

        match outcome {
            Ok(()) => {
                record.advance(SettlementStatus::Committed);
                let ids: Vec<u64> = entries.iter().map(|e| e.id).collect();
                if let Err(e) = self.pool.ack(&ids) {
                    tracing::error!(batch = batch_number, error = %e, "pool journal ack failed");
                }
                cursor.next_batch += 1;
                cursor.attempts = 0;
                self.counters.batches_committed.fetch_add(1, Ordering::Relaxed);
                self.counters.txs_settled.fetch_add(entries.len() as u64, Ordering::Relaxed);
            }
            Err((stage, error)) => {
                record.fail(stage, error);
                cursor.attempts += 1;
                self.counters.batches_failed.fetch_add(1, Ordering::Relaxed);
                if cursor.attempts > self.options.max_retries {
                    record.dead_lettered = true;
                    cursor.attempts = 0;
                    self.counters.txs_dead_lettered.fetch_add(entries.len() as u64, Ordering::Relaxed);
                    if let Err(e) = self.pool.dead_letter(&entries) {
                        tracing::error!(batch = batch_number, error = %e, "pool journal dead-letter failed");
                    }
                } else {
                    self.pool.requeue_front(&entries);
                }
            }
        }
        self.record(&record);
        Some(record)
    }

    async fn run_stages(
        &self,
        batch_number: u64,
        entries: &[PoolEntry],
        record: &mut SettlementRecord,
    ) -> Result<(), (Stage, String)> {
        let prepared = prepare_batch(batch_number, entries, record.started_at)
            .map_err(|e| (Stage::Seal, e.to_string()))?;
        record.merkle_root = Some(prepared.root);

        let started = Instant::now();
        let prover = self.prover.clone();
        let statement = prepared.statement();
        let proof = tokio::task::spawn_blocking(move || prover.prove(&statement))
            .await
            .map_err(|e| (Stage::Prove, e.to_string()))?
            .map_err(|e| (Stage::Prove, e.to_string()))?;
        record.proof_gen_ms = Some(ms_since(started));
        record.proof_backend = Some(proof.backend);
        record.advance(SettlementStatus::Proved);

        let started = Instant::now();
        let store = self.store.clone();
        let bytes = prepared.payload.canonical_bytes();
        let cid = tokio::task::spawn_blocking(move || store.put(&bytes))
            .await
            .map_err(|e| (Stage::Store, e.to_string()))?
            .map_err(|e| (Stage::Store, e.to_string()))?;
        record.upload_ms = Some(ms_since(started));
        record.cid = Some(cid.clone());
        record.advance(SettlementStatus::Stored);

        let started = Instant::now();
        let receipt = self
            .ledger
            .submit(LedgerCall::CommitBatch(BatchSubmission {
                batch_number,
                merkle_root: prepared.root,
                ipfs_cid: cid,
                tx_count: entries.len(),
                proof: proof.proof_bytes,
            }))
            .await;
        record.l1_commit_ms = Some(ms_since(started));
        match receipt.outcome {
            Outcome::Committed { .. } => Ok(()),
            Outcome::Rejected { stage, reason } => {
                Err((Stage::L1Commit, format!("rejected at {stage:?}: {reason}")))
            }
        }
    }

    fn record(&self, record: &SettlementRecord) {
        match record.status {
            SettlementStatus::Committed => tracing::info!(
                batch = record.batch_number,
                real_count = record.real_count,
                proof_gen_ms = record.proof_gen_ms,
                upload_ms = record.upload_ms,
                l1_commit_ms = record.l1_commit_ms,
                "batch committed"
            ),
            _ => tracing::warn!(
                batch = record.batch_number,
                attempt = record.attempt,
                stage = ?record.failed_stage,
                error = record.error.as_deref().unwrap_or(""),
                "settlement failed"
            ),
        }
        if let Some(log) = &self.log {
            let mut sink = log.lock();
            let line = serde_json::to_string(record).expect("record serializes");
            if let Err(e) = writeln!(sink, "{line}").and_then(|_| sink.flush()) {
                tracing::error!(error = %e, "settlement log write failed");
            }
        }
        self.latest.write().insert(record.batch_number, record.clone());
        self.history.lock().push(record.clone());
    }

    pub fn get_batch(&self, n: u64) -> Option<BatchView> {
        let record = self.latest.read().get(&n).cloned();
        let commitment = self.ledger.get_batch(n);
        if record.is_none() && commitment.is_none() {
            return None;
        }
        Some(BatchView { record, commitment })
    }

    /// Every attempt so far, in order.
    pub fn history(&self) -> Vec<SettlementRecord> {
        self.history.lock().clone()
    }

    pub fn metrics(&self) -> MetricsSnapshot {
        let history = self.history.lock();
        let committed: Vec<&SettlementRecord> =
            history.iter().filter(|r| r.status == SettlementStatus::Committed).collect();
        let series = |f: fn(&SettlementRecord) -> Option<f64>| -> Summary {
            Summary::of(&committed.iter().filter_map(|r| f(r)).collect::<Vec<_>>())
        };
        let c = &self.counters;
        MetricsSnapshot {
            accepted: c.accepted.load(Ordering::Relaxed),
            rejected_invalid: c.rejected_invalid.load(Ordering::Relaxed),
            rejected_full: c.rejected_full.load(Ordering::Relaxed),
            direct_committed: c.direct_committed.load(Ordering::Relaxed),
            direct_rejected: c.direct_rejected.load(Ordering::Relaxed),
            batches_committed: c.batches_committed.load(Ordering::Relaxed),
            batches_failed: c.batches_failed.load(Ordering::Relaxed),
            txs_settled: c.txs_settled.load(Ordering::Relaxed),
            txs_dead_lettered: c.txs_dead_lettered.load(Ordering::Relaxed),
            pool: self.pool.stats(),
            last_committed_batch: self.ledger.last_batch_number(),
            ledger_blocks: self.ledger.block_count(),
            stages: StageSummaries {
                proof_gen_ms: series(|r| r.proof_gen_ms),
                upload_ms: series(|r| r.upload_ms),
                l1_commit_ms: series(|r| r.l1_commit_ms),
            },
        }
    }

    /// Settlement worker: fires when a full batch is pending or every
    /// `settle_interval` while anything is pending, until `shutdown` resolves.
    pub async fn run(self: Arc<Self>, shutdown: impl Future<Output = ()>) {
        let mut ticker = tokio::time::interval(self.options.settle_interval);
        ticker.set_missed_tick_behavior(MissedTickBehavior::Delay);
        tokio::pin!(shutdown);
        let mut backing_off = false;
        loop {
            // After a failure only the ticker retries, so a full pool cannot
            // burn the retry budget in a tight loop.
            tokio::select! {
                _ = &mut shutdown => return,
                _ = self.pool.batch_ready(), if !backing_off => {}
                _ = ticker.tick() => {}
            }
            backing_off = false;
            loop {
                let Some(record) = self.settle_once().await else { break };
                if record.status != SettlementStatus::Committed {
                    backing_off = true;
                    break;
                }
                if self.pool.pending_len() < self.pool.batch_size() {
                    break;
                }
            }
        }
    }

    /// Settles until nothing is pending or `timeout` passes. Returns true if
    /// the pool drained.
    pub async fn drain(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        while Instant::now() < deadline {
            if self.settle_once().await.is_none() {
                return true;
            }
        }
        self.pool.is_empty()
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}
