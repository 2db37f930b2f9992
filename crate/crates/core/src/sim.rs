//! Deterministic virtual-time runs of the whole system.
//!
//! Direct clients submit `CreateAsset` straight to the ledger; rollup clients
//! push into the pool and a settlement worker batches, proves (reference
//! backend), stores (in memory) and commits. Prove and upload take fixed
//! virtual durations. Everything is driven by one event queue and seeded
//! RNGs, so a configuration always produces the same block log.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::cid::Cid;
use crate::field::FieldElement;
use crate::ledger::{BatchSubmission, Block, LatencyModel, Ledger, LedgerCall, LedgerError, Receipt};
use crate::pool::{PoolEntry, TxPool};
use crate::proof::ProofSystem;
use crate::sequencer::prepare_batch;
use crate::stats::Summary;
use crate::store::{BlobStore, MemoryStore};
use crate::tx::{random_transaction, MAX_BATCH};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimConfig {
    pub seed: u64,
    pub model: LatencyModel,
    pub direct_clients: usize,
    pub rollup_clients: usize,
    pub duration_ms: u64,
    pub think_ms: u64,
    /// Virtual time to answer one `/submit`.
    pub accept_ms: u64,
    pub pool_capacity: usize,
    pub settle_interval_ms: u64,
    pub prove_ms: u64,
    pub upload_ms: u64,
    pub retry_after_ms: u64,
    /// Settlement may keep draining for this long after the clients stop.
    pub drain_limit_ms: u64,
    pub genesis_epoch_ms: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 1,
            model: LatencyModel::CALIBRATED,
            direct_clients: 0,
            rollup_clients: 0,
            duration_ms: 30_000,
            think_ms: 0,
            accept_ms: 1,
            pool_capacity: 100_000,
            settle_interval_ms: 2000,
            prove_ms: 40,
            upload_ms: 5,
            retry_after_ms: 1000,
            drain_limit_ms: 3_600_000,
            genesis_epoch_ms: 1_735_689_600_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimBatch {
    pub batch_number: u64,
    pub merkle_root: FieldElement,
    pub cid: Cid,
    pub real_count: usize,
    pub tracking_ids: Vec<u64>,
    pub committed_at: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ClientStats {
    pub succeeded: u64,
    pub failed: u64,
    /// Successful request latencies in issue order.
    pub latencies_ms: Vec<u64>,
    pub elapsed_ms: u64,
}

impl ClientStats {
    pub fn throughput(&self) -> f64 {
        if self.elapsed_ms == 0 {
            0.0
        } else {
            self.succeeded as f64 * 1000.0 / self.elapsed_ms as f64
        }
    }

    pub fn latency(&self) -> Summary {
        Summary::of(&self.latencies_ms.iter().map(|&v| v as f64).collect::<Vec<_>>())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimReport {
    pub config: SimConfig,
    pub blocks: Vec<Block>,
    pub batches: Vec<SimBatch>,
    pub direct: ClientStats,
    pub rollup: ClientStats,
    pub pending_at_end: usize,
    pub end_ms: u64,
}

impl SimReport {
    pub fn block_log(&self) -> Vec<u8> {
        let mut out = Vec::new();
        crate::ledger::write_block_log(&self.blocks, &mut out).expect("writing to a Vec");
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    DirectIssue(usize),
    RollupIssue(usize),
    SettleTick,
    ProveDone,
    UploadDone,
}

enum Settlement {
    Idle,
    Proving { entries: Vec<PoolEntry>, batch: crate::sequencer::PreparedBatch, proof: Vec<u8> },
    Uploading { entries: Vec<PoolEntry>, root: FieldElement, proof: Vec<u8>, cid: Cid },
    Committing { ticket: u64, entries: Vec<PoolEntry>, root: FieldElement, cid: Cid },
}

struct World {
    cfg: SimConfig,
    ledger: Ledger,
    pool: TxPool,
    store: MemoryStore,
    prover: Arc<ProofSystem>,
    rng: ChaCha20Rng,
    queue: BinaryHeap<Reverse<(u64, u64, Event)>>,
    seq: u64,
    direct_tickets: HashMap<u64, (usize, u64)>,
    settlement: Settlement,
    next_batch: u64,
    batches: Vec<SimBatch>,
    direct: ClientStats,
    rollup: ClientStats,
    last_direct_done: u64,
    last_rollup_done: u64,
    ticking: bool,
}

impl World {
    fn schedule(&mut self, at: u64, e: Event) {
        self.seq += 1;
        self.queue.push(Reverse((at, self.seq, e)));
    }

    fn clients_active(&self, t: u64) -> bool {
        t < self.cfg.duration_ms
    }

    fn handle_receipts(&mut self, receipts: Vec<Receipt>) {
        for r in receipts {
            if let Some((client, issued)) = self.direct_tickets.remove(&r.ticket) {
                if r.is_committed() {
                    self.direct.succeeded += 1;
                    self.direct.latencies_ms.push(r.completed_at - issued);
                } else {
                    self.direct.failed += 1;
                }
                self.last_direct_done = self.last_direct_done.max(r.completed_at);
                self.schedule(r.completed_at + self.cfg.think_ms, Event::DirectIssue(client));
                continue;
            }
            let matches = matches!(&self.settlement, Settlement::Committing { ticket, .. } if *ticket == r.ticket);
            if matches {
                let Settlement::Committing { entries, root, cid, .. } =
                    std::mem::replace(&mut self.settlement, Settlement::Idle)
                else {
                    unreachable!()
                };
                if r.is_committed() {
                    let ids: Vec<u64> = entries.iter().map(|e| e.id).collect();
                    self.pool.ack(&ids).expect("memory pool has no journal");
                    self.batches.push(SimBatch {
                        batch_number: self.next_batch,
                        merkle_root: root,
                        cid,
                        real_count: entries.len(),
                        tracking_ids: ids,
                        committed_at: r.completed_at,
                    });
                    self.next_batch += 1;
                } else {
                    self.pool.requeue_front(&entries);
                }
                self.maybe_settle(r.completed_at, false);
            }
        }
    }

    fn maybe_settle(&mut self, t: u64, tick: bool) {
        if !matches!(self.settlement, Settlement::Idle) {
            return;
        }
        let pending = self.pool.pending_len();
        if pending >= MAX_BATCH || (tick && pending > 0) {
            let entries = self.pool.take(MAX_BATCH);
            let batch = prepare_batch(self.next_batch, &entries, self.cfg.genesis_epoch_ms + t)
                .expect("pooled transactions are valid");
            let proof = self.prover.prove(&batch.statement()).expect("honest statement").proof_bytes;
            self.settlement = Settlement::Proving { entries, batch, proof };
            self.schedule(t + self.cfg.prove_ms, Event::ProveDone);
        }
    }

    fn ensure_ticking(&mut self, t: u64) {
        if !self.ticking {
            self.ticking = true;
            let interval = self.cfg.settle_interval_ms;
            self.schedule((t / interval + 1) * interval, Event::SettleTick);
        }
    }

    fn handle(&mut self, t: u64, e: Event) -> Result<(), LedgerError> {
        match e {
            Event::DirectIssue(client) => {
                if self.clients_active(t) {
                    let tx = random_transaction(&mut self.rng, self.cfg.genesis_epoch_ms + t);
                    let ticket = self.ledger.submit(LedgerCall::create_asset(&tx), t)?;
                    self.direct_tickets.insert(ticket, (client, t));
                }
            }
            Event::RollupIssue(client) => {
                if self.clients_active(t) {
                    let tx = random_transaction(&mut self.rng, self.cfg.genesis_epoch_ms + t);
                    match self.pool.push(tx) {
                        Ok(_) => {
                            let done = t + self.cfg.accept_ms;
                            self.rollup.succeeded += 1;
                            self.rollup.latencies_ms.push(self.cfg.accept_ms);
                            self.last_rollup_done = self.last_rollup_done.max(done);
                            self.schedule(done + self.cfg.think_ms, Event::RollupIssue(client));
                            self.ensure_ticking(t);
                            self.maybe_settle(t, false);
                        }
                        Err(_) => {
                            self.rollup.failed += 1;
                            let done = t + self.cfg.accept_ms;
                            self.last_rollup_done = self.last_rollup_done.max(done);
                            self.schedule(done + self.cfg.retry_after_ms, Event::RollupIssue(client));
                        }
                    }
                }
            }
            Event::SettleTick => {
                self.ticking = false;
                self.maybe_settle(t, true);
                let busy = !matches!(self.settlement, Settlement::Idle);
                if self.pool.pending_len() > 0 || busy || self.clients_active(t) {
                    self.ensure_ticking(t);
                }
            }
            Event::ProveDone => {
                let Settlement::Proving { entries, batch, proof } =
                    std::mem::replace(&mut self.settlement, Settlement::Idle)
                else {
                    unreachable!("prove completion without a batch")
                };
                let cid = self.store.put(&batch.payload.canonical_bytes()).expect("memory store");
                self.settlement = Settlement::Uploading { entries, root: batch.root, proof, cid };
                self.schedule(t + self.cfg.upload_ms, Event::UploadDone);
            }
            Event::UploadDone => {
                let Settlement::Uploading { entries, root, proof, cid } =
                    std::mem::replace(&mut self.settlement, Settlement::Idle)
                else {
                    unreachable!("upload completion without a batch")
                };
                let call = LedgerCall::CommitBatch(BatchSubmission {
                    batch_number: self.next_batch,
                    merkle_root: root,
                    ipfs_cid: cid.clone(),
                    tx_count: entries.len(),
                    proof,
                });
                let ticket = self.ledger.submit(call, t)?;
                self.settlement = Settlement::Committing { ticket, entries, root, cid };
            }
        }
        let receipts = self.ledger.take_receipts();
        self.handle_receipts(receipts);
        Ok(())
    }
}

/// Runs one simulation to completion.
pub fn run(cfg: &SimConfig) -> Result<SimReport, LedgerError> {
    let prover = Arc::new(ProofSystem::reference());
    let mut w = World {
        cfg: cfg.clone(),
        ledger: Ledger::new(cfg.model, prover.clone(), cfg.genesis_epoch_ms)?,
        pool: TxPool::new(cfg.pool_capacity, MAX_BATCH),
        store: MemoryStore::new(),
        prover,
        rng: ChaCha20Rng::seed_from_u64(cfg.seed),
        queue: BinaryHeap::new(),
        seq: 0,
        direct_tickets: HashMap::new(),
        settlement: Settlement::Idle,
        next_batch: 1,
        batches: Vec::new(),
        direct: ClientStats::default(),
        rollup: ClientStats::default(),
        last_direct_done: 0,
        last_rollup_done: 0,
        ticking: false,
    };
    for c in 0..cfg.direct_clients {
        w.schedule(0, Event::DirectIssue(c));
    }
    for c in 0..cfg.rollup_clients {
        w.schedule(0, Event::RollupIssue(c));
    }
    let hard_stop = cfg.duration_ms + cfg.drain_limit_ms;
    let mut now = 0;
    loop {
        let next_queue = w.queue.peek().map(|Reverse((t, _, _))| *t);
        let next_ledger = w.ledger.next_event_at();
        let Some(t) = [next_queue, next_ledger].into_iter().flatten().min() else { break };
        if t > hard_stop {
            break;
        }
        now = t;
        w.ledger.advance_to(t)?;
        let receipts = w.ledger.take_receipts();
        w.handle_receipts(receipts);
        while w.queue.peek().is_some_and(|Reverse((at, _, _))| *at == t) {
            let Reverse((_, _, e)) = w.queue.pop().expect("peeked");
            w.handle(t, e)?;
        }
    }
    w.direct.elapsed_ms = if cfg.direct_clients > 0 { cfg.duration_ms.max(w.last_direct_done) } else { 0 };
    w.rollup.elapsed_ms = if cfg.rollup_clients > 0 { cfg.duration_ms.max(w.last_rollup_done) } else { 0 };
    Ok(SimReport {
        config: cfg.clone(),
        blocks: w.ledger.blocks().to_vec(),
        batches: w.batches,
        direct: w.direct,
        rollup: w.rollup,
        pending_at_end: w.pool.pending_len(),
        end_ms: now,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CalibrationPoint {
    pub model: LatencyModel,
    pub throughput: f64,
    pub mean_latency_ms: f64,
    /// Sum of relative distances to the targets.
    pub error: f64,
}

/// Sweeps block interval and block size with the other delays fixed, scoring
/// each point against target direct-commit throughput and mean latency for
/// `clients` closed-loop clients.
pub fn calibrate(
    base: LatencyModel,
    intervals_ms: &[u64],
    block_sizes: &[usize],
    clients: usize,
    duration_ms: u64,
    target_tps: f64,
    target_latency_ms: f64,
) -> Result<Vec<CalibrationPoint>, LedgerError> {
    let mut points = Vec::new();
    for &block_interval_ms in intervals_ms {
        for &max_tx_per_block in block_sizes {
            let model = LatencyModel { block_interval_ms, max_tx_per_block, ..base };
            let report = run(&SimConfig {
                model,
                direct_clients: clients,
                duration_ms,
                ..SimConfig::default()
            })?;
            let throughput = report.direct.throughput();
            let mean_latency_ms = report.direct.latency().mean;
            let error = (throughput - target_tps).abs() / target_tps
                + (mean_latency_ms - target_latency_ms).abs() / target_latency_ms;
            points.push(CalibrationPoint { model, throughput, mean_latency_ms, error });
        }
    }
    points.sort_by(|a, b| a.error.total_cmp(&b.error));
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(direct: usize, rollup: usize, seed: u64) -> SimConfig {
        SimConfig {
            seed,
            direct_clients: direct,
            rollup_clients: rollup,
            duration_ms: 10_000,
            think_ms: 500,
            ..SimConfig::default()
        }
    }

    #[test]
    fn calibrated_direct_clients_hit_the_target_band() {
        let r = run(&SimConfig { direct_clients: 20, ..SimConfig::default() }).unwrap();
        let tps = r.direct.throughput();
        let mean = r.direct.latency().mean;
        assert!((5.0..=7.0).contains(&tps), "{tps}");
        assert!((2500.0..=3500.0).contains(&mean), "{mean}");
        assert_eq!(r.direct.failed, 0);
    }

    #[test]
    fn runs_are_reproducible() {
        let cfg = short(5, 20, 42);
        let a = run(&cfg).unwrap();
        let b = run(&cfg).unwrap();
        assert_eq!(a.block_log(), b.block_log());
        assert_eq!(a.batches, b.batches);
        let c = run(&short(5, 20, 43)).unwrap();
        assert_ne!(a.block_log(), c.block_log());
    }

    #[test]
    fn every_accepted_rollup_tx_settles_once() {
        let r = run(&short(0, 30, 7)).unwrap();
        assert_eq!(r.pending_at_end, 0);
        let mut ids: Vec<u64> = r.batches.iter().flat_map(|b| b.tracking_ids.clone()).collect();
        let n = ids.len();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), n);
        assert_eq!(n as u64, r.rollup.succeeded);
        let numbers: Vec<u64> = r.batches.iter().map(|b| b.batch_number).collect();
        assert_eq!(numbers, (1..=r.batches.len() as u64).collect::<Vec<_>>());
    }

    #[test]
    fn back_pressure_bounds_the_pool() {
        let cfg = SimConfig { pool_capacity: 100, think_ms: 0, ..short(0, 10, 8) };
        let r = run(&cfg).unwrap();
        assert!(r.rollup.failed > 0);
        assert_eq!(r.pending_at_end, 0);
    }

    #[test]
    fn mixed_traffic_shares_blocks() {
        let r = run(&short(10, 10, 11)).unwrap();
        assert!(r.direct.succeeded > 0 && !r.batches.is_empty());
        let batch_keys = r.blocks.iter().flat_map(|b| &b.entries).filter(|e| matches!(e.call, LedgerCall::CommitBatch(_))).count();
        assert!(batch_keys >= r.batches.len());
    }
}
