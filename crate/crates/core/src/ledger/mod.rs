//! Simulated permissioned ledger.
//!
//! A deterministic discrete-event model of an endorse, order, validate/commit
//! pipeline over a key-value world state. Time is integer milliseconds since
//! genesis and only moves when the caller advances it, so the same schedule
//! of submissions always yields the same block log. [`live::LiveLedger`]
//! drives the same core from the wall clock.
//!
//! Pipeline for a submission at time `t`:
//!
//! 1. endorsement finishes at `t + endorseMs`; chaincode checks run against
//!    committed state and failures are rejected immediately;
//! 2. endorsed transactions queue at the orderer, which cuts a block at every
//!    multiple of `blockIntervalMs` taking at most `maxTxPerBlock` of them
//!    (interval 0 cuts on arrival);
//! 3. the block reaches the committer `orderMs` after the cut; blocks commit
//!    one at a time, each taking `commitMs`; transactions are revalidated
//!    against state at commit (duplicate keys, batch sequence) and only valid
//!    ones are applied.

pub mod live;

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::io::{self, BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cid::Cid;
use crate::field::FieldElement;
use crate::proof::ProofSystem;
use crate::tx::MAX_BATCH;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct LatencyModel {
    pub endorse_ms: u64,
    pub order_ms: u64,
    pub commit_ms: u64,
    pub block_interval_ms: u64,
    pub max_tx_per_block: usize,
}

impl LatencyModel {
    /// All delays zero, cut on arrival.
    pub const INSTANT: LatencyModel = LatencyModel {
        endorse_ms: 0,
        order_ms: 0,
        commit_ms: 0,
        block_interval_ms: 0,
        max_tx_per_block: 500,
    };

    /// Profile fitted so 20 closed-loop direct clients see about 6.5 tx/s at
    /// about 3.1 s mean latency. The orderer admits at most
    /// `maxTxPerBlock / blockIntervalMs` = 6.5 tx/s, and by Little's law
    /// 20 clients at that rate wait 20 / 6.5 = 3.08 s.
    pub const CALIBRATED: LatencyModel = LatencyModel {
        endorse_ms: 300,
        order_ms: 500,
        commit_ms: 200,
        block_interval_ms: 2000,
        max_tx_per_block: 13,
    };

    pub fn validate(&self) -> Result<(), LedgerError> {
        if self.max_tx_per_block == 0 {
            return Err(LedgerError::InvalidModel("maxTxPerBlock must be at least 1"));
        }
        Ok(())
    }

    /// Closed-form latency of a lone transaction submitted at `t` on an
    /// otherwise idle ledger.
    pub fn lone_latency(&self, t: u64) -> u64 {
        let endorsed = t + self.endorse_ms;
        next_tick(endorsed, self.block_interval_ms) + self.order_ms + self.commit_ms - t
    }
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel::CALIBRATED
    }
}

fn next_tick(t: u64, interval: u64) -> u64 {
    if interval == 0 {
        t
    } else {
        t.div_ceil(interval) * interval
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LedgerError {
    #[error("invalid latency model: {0}")]
    InvalidModel(&'static str),
    #[error("time cannot move backwards (now {now}, requested {requested})")]
    TimeTravel { now: u64, requested: u64 },
    #[error("block log is malformed: {0}")]
    BlockLog(String),
}

/// What a client asks the batch commitment chaincode to record.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct BatchSubmission {
    pub batch_number: u64,
    pub merkle_root: FieldElement,
    pub ipfs_cid: Cid,
    pub tx_count: usize,
    #[serde(with = "hex_bytes")]
    pub proof: Vec<u8>,
}

/// On-chain batch metadata, stored under `BATCH_<n>`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct BatchCommitment {
    pub batch_number: u64,
    pub merkle_root: FieldElement,
    pub ipfs_cid: Cid,
    pub tx_count: usize,
    #[serde(with = "hex_bytes")]
    pub proof: Vec<u8>,
    /// Milliseconds since the Unix epoch.
    pub committed_at: u64,
}

/// Stored under `ASSET_<id>`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct AssetRecord {
    pub asset_id: String,
    pub participant: String,
    pub asset_cid: String,
    pub created_at: u64,
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        hex::decode(text).map_err(serde::de::Error::custom)
    }
}

/// A chaincode invocation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "fn", content = "args", rename_all_fields = "camelCase")]
pub enum LedgerCall {
    CreateAsset { asset_id: String, participant: String, asset_cid: String },
    CommitBatch(BatchSubmission),
}

impl LedgerCall {
    pub fn create_asset(tx: &crate::tx::Transaction) -> Self {
        LedgerCall::CreateAsset {
            asset_id: tx.asset_id.clone(),
            participant: tx.participant.clone(),
            asset_cid: tx.asset_cid.clone(),
        }
    }

    pub fn key(&self) -> String {
        match self {
            LedgerCall::CreateAsset { asset_id, .. } => asset_key(asset_id),
            LedgerCall::CommitBatch(b) => batch_key(b.batch_number),
        }
    }
}

pub fn asset_key(asset_id: &str) -> String {
    format!("ASSET_{asset_id}")
}

pub fn batch_key(n: u64) -> String {
    format!("BATCH_{n}")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RejectStage {
    Endorsement,
    Validation,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Rejection {
    DuplicateKey(String),
    OutOfSequence { expected: u64, got: u64 },
    InvalidProof,
    BadTxCount(usize),
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rejection::DuplicateKey(k) => write!(f, "key {k} already exists"),
            Rejection::OutOfSequence { expected, got } => {
                write!(f, "batch {got} is out of sequence, expected {expected}")
            }
            Rejection::InvalidProof => f.write_str("proof does not verify for the merkle root"),
            Rejection::BadTxCount(n) => write!(f, "txCount {n} is outside 1..={MAX_BATCH}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase", rename_all_fields = "camelCase")]
pub enum Outcome {
    Committed { block_number: u64 },
    Rejected { stage: RejectStage, reason: Rejection },
}

/// Result of one submission, stamped with simulated times.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Receipt {
    pub ticket: u64,
    pub key: String,
    pub submitted_at: u64,
    pub completed_at: u64,
    pub outcome: Outcome,
}

impl Receipt {
    pub fn latency_ms(&self) -> u64 {
        self.completed_at - self.submitted_at
    }

    pub fn is_committed(&self) -> bool {
        matches!(self.outcome, Outcome::Committed { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BlockEntry {
    pub ticket: u64,
    pub call: LedgerCall,
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejection: Option<Rejection>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Block {
    pub number: u64,
    pub cut_at: u64,
    pub committed_at: u64,
    pub entries: Vec<BlockEntry>,
}

/// Committed key-value state.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WorldState {
    kv: BTreeMap<String, Vec<u8>>,
    last_batch: u64,
}

impl WorldState {
    pub fn get(&self, key: &str) -> Option<&[u8]> {
        self.kv.get(key).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.kv.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kv.is_empty()
    }

    pub fn last_batch(&self) -> u64 {
        self.last_batch
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.kv.keys().map(String::as_str)
    }

    /// Chaincode checks that only depend on state.
    fn check(&self, call: &LedgerCall) -> Result<(), Rejection> {
        let key = call.key();
        if self.kv.contains_key(&key) {
            return Err(Rejection::DuplicateKey(key));
        }
        if let LedgerCall::CommitBatch(b) = call {
            if b.batch_number != self.last_batch + 1 {
                return Err(Rejection::OutOfSequence {
                    expected: self.last_batch + 1,
                    got: b.batch_number,
                });
            }
            if b.tx_count == 0 || b.tx_count > MAX_BATCH {
                return Err(Rejection::BadTxCount(b.tx_count));
            }
        }
        Ok(())
    }

    fn apply(&mut self, call: &LedgerCall, committed_at: u64) {
        let value = match call {
            LedgerCall::CreateAsset { asset_id, participant, asset_cid } => {
                serde_json::to_vec(&AssetRecord {
                    asset_id: asset_id.clone(),
                    participant: participant.clone(),
                    asset_cid: asset_cid.clone(),
                    created_at: committed_at,
                })
            }
            LedgerCall::CommitBatch(b) => {
                self.last_batch = b.batch_number;
                serde_json::to_vec(&BatchCommitment {
                    batch_number: b.batch_number,
                    merkle_root: b.merkle_root,
                    ipfs_cid: b.ipfs_cid.clone(),
                    tx_count: b.tx_count,
                    proof: b.proof.clone(),
                    committed_at,
                })
            }
        };
        self.kv.insert(call.key(), value.expect("ledger values serialize"));
    }

    /// Rebuilds state from a block log, re-running the state checks and
    /// requiring them to agree with the recorded validity flags.
    pub fn replay(blocks: &[Block], genesis_epoch_ms: u64) -> Result<WorldState, LedgerError> {
        let mut state = WorldState::default();
        for block in blocks {
            for entry in &block.entries {
                let ok = state.check(&entry.call).is_ok();
                if ok != entry.valid {
                    return Err(LedgerError::BlockLog(format!(
                        "block {} ticket {} recorded valid={} but replay says {ok}",
                        block.number, entry.ticket, entry.valid
                    )));
                }
                if ok {
                    state.apply(&entry.call, genesis_epoch_ms + block.committed_at);
                }
            }
        }
        Ok(state)
    }
}

#[derive(Debug)]
struct Queued {
    ticket: u64,
    submitted_at: u64,
    call: LedgerCall,
}

#[derive(Debug)]
struct InTransit {
    deliver_at: u64,
    cut_at: u64,
    txs: Vec<Queued>,
}

#[derive(Debug)]
struct Committing {
    done_at: u64,
    cut_at: u64,
    txs: Vec<Queued>,
}

/// The ledger state machine.
pub struct Ledger {
    model: LatencyModel,
    verifier: Arc<ProofSystem>,
    genesis_epoch_ms: u64,
    now: u64,
    next_ticket: u64,
    state: WorldState,
    blocks: Vec<Block>,
    /// Keyed by (endorsement completion time, ticket).
    endorsing: BTreeMap<(u64, u64), Queued>,
    /// Endorsed, waiting for a cut.
    orderer: VecDeque<(u64, Queued)>,
    last_cut: Option<u64>,
    in_transit: VecDeque<InTransit>,
    delivered: VecDeque<InTransit>,
    committing: Option<Committing>,
    receipts: Vec<Receipt>,
}

impl fmt::Debug for Ledger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Ledger")
            .field("model", &self.model)
            .field("now", &self.now)
            .field("blocks", &self.blocks.len())
            .field("keys", &self.state.len())
            .finish()
    }
}

impl Ledger {
    /// `verifier` gates batch commitments; `genesis_epoch_ms` anchors
    /// simulated time to wall-clock timestamps in stored records.
    pub fn new(
        model: LatencyModel,
        verifier: Arc<ProofSystem>,
        genesis_epoch_ms: u64,
    ) -> Result<Self, LedgerError> {
        model.validate()?;
        Ok(Ledger {
            model,
            verifier,
            genesis_epoch_ms,
            now: 0,
            next_ticket: 1,
            state: WorldState::default(),
            blocks: Vec::new(),
            endorsing: BTreeMap::new(),
            orderer: VecDeque::new(),
            last_cut: None,
            in_transit: VecDeque::new(),
            delivered: VecDeque::new(),
            committing: None,
            receipts: Vec::new(),
        })
    }

    pub fn model(&self) -> &LatencyModel {
        &self.model
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn genesis_epoch_ms(&self) -> u64 {
        self.genesis_epoch_ms
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn query(&self, key: &str) -> Option<&[u8]> {
        self.state.get(key)
    }

    pub fn get_batch(&self, n: u64) -> Option<BatchCommitment> {
        self.query(&batch_key(n)).and_then(|v| serde_json::from_slice(v).ok())
    }

    pub fn get_asset(&self, asset_id: &str) -> Option<AssetRecord> {
        self.query(&asset_key(asset_id)).and_then(|v| serde_json::from_slice(v).ok())
    }

    pub fn last_batch_number(&self) -> u64 {
        self.state.last_batch
    }

    /// Number of submissions that have not produced a receipt yet.
    pub fn in_flight(&self) -> usize {
        self.endorsing.len()
            + self.orderer.len()
            + self.in_transit.iter().map(|b| b.txs.len()).sum::<usize>()
            + self.delivered.iter().map(|b| b.txs.len()).sum::<usize>()
            + self.committing.as_ref().map_or(0, |c| c.txs.len())
    }

    pub fn is_idle(&self) -> bool {
        self.in_flight() == 0
    }

    /// Advances to `now` first, then enqueues the call for endorsement.
    pub fn submit(&mut self, call: LedgerCall, now: u64) -> Result<u64, LedgerError> {
        self.advance_to(now)?;
        let ticket = self.next_ticket;
        self.next_ticket += 1;
        self.endorsing
            .insert((now + self.model.endorse_ms, ticket), Queued { ticket, submitted_at: now, call });
        // A zero endorsement delay can complete right away.
        self.advance_to(now)?;
        Ok(ticket)
    }

    /// Completed receipts since the last call, in completion order.
    pub fn take_receipts(&mut self) -> Vec<Receipt> {
        std::mem::take(&mut self.receipts)
    }

    fn next_cut_at(&self) -> Option<u64> {
        let (arrived, _) = self.orderer.front()?;
        let interval = self.model.block_interval_ms;
        if interval == 0 {
            return Some((*arrived).max(self.now));
        }
        let mut tick = next_tick(*arrived, interval);
        if let Some(last) = self.last_cut {
            if tick <= last {
                tick = last + interval;
            }
        }
        Some(tick)
    }

    /// Time of the next internal event, if any.
    pub fn next_event_at(&self) -> Option<u64> {
        [
            self.endorsing.keys().next().map(|(t, _)| *t),
            self.next_cut_at(),
            self.in_transit.front().map(|b| b.deliver_at),
            self.committing.as_ref().map(|c| c.done_at),
        ]
        .into_iter()
        .flatten()
        .min()
    }

    /// Processes every event due at or before `t`, then sets the clock to `t`.
    pub fn advance_to(&mut self, t: u64) -> Result<(), LedgerError> {
        if t < self.now {
            return Err(LedgerError::TimeTravel { now: self.now, requested: t });
        }
        while let Some(at) = self.next_event_at() {
            if at > t {
                break;
            }
            self.now = at;
            self.step(at);
        }
        self.now = t;
        Ok(())
    }

    /// One pass over everything due at `at`, in a fixed order: endorsements,
    /// commit completion, deliveries, cuts.
    fn step(&mut self, at: u64) {
        while let Some(entry) = self.endorsing.first_entry() {
            if entry.key().0 > at {
                break;
            }
            let q = entry.remove();
            match self.endorse(&q.call) {
                Ok(()) => self.orderer.push_back((at, q)),
                Err(reason) => self.receipts.push(Receipt {
                    ticket: q.ticket,
                    key: q.call.key(),
                    submitted_at: q.submitted_at,
                    completed_at: at,
                    outcome: Outcome::Rejected { stage: RejectStage::Endorsement, reason },
                }),
            }
        }

        if self.committing.as_ref().is_some_and(|c| c.done_at <= at) {
            let c = self.committing.take().expect("checked above");
            self.finish_commit(c);
        }

        while self.in_transit.front().is_some_and(|b| b.deliver_at <= at) {
            let b = self.in_transit.pop_front().expect("checked above");
            self.delivered.push_back(b);
        }
        self.start_commit(at);

        while self.next_cut_at().is_some_and(|c| c <= at) {
            let take = self.orderer.len().min(self.model.max_tx_per_block);
            let txs: Vec<Queued> = self.orderer.drain(..take).map(|(_, q)| q).collect();
            self.last_cut = Some(at);
            self.in_transit.push_back(InTransit { deliver_at: at + self.model.order_ms, cut_at: at, txs });
            if self.model.block_interval_ms != 0 {
                break;
            }
        }
        // A zero ordering delay delivers within the same instant.
        while self.in_transit.front().is_some_and(|b| b.deliver_at <= at) {
            let b = self.in_transit.pop_front().expect("checked above");
            self.delivered.push_back(b);
        }
        self.start_commit(at);
        if self.model.commit_ms == 0 {
            while let Some(c) = self.committing.take() {
                self.finish_commit(c);
                self.start_commit(at);
            }
        }
    }

    fn start_commit(&mut self, at: u64) {
        if self.committing.is_none() {
            if let Some(b) = self.delivered.pop_front() {
                self.committing =
                    Some(Committing { done_at: at + self.model.commit_ms, cut_at: b.cut_at, txs: b.txs });
            }
        }
    }

    /// Chaincode simulation against committed state.
    fn endorse(&self, call: &LedgerCall) -> Result<(), Rejection> {
        self.state.check(call)?;
        if let LedgerCall::CommitBatch(b) = call {
            if !self.verifier.verify_parts(b.merkle_root, &b.proof) {
                return Err(Rejection::InvalidProof);
            }
        }
        Ok(())
    }

    fn finish_commit(&mut self, c: Committing) {
        let number = self.blocks.len() as u64 + 1;
        let committed_at = c.done_at;
        let mut entries = Vec::with_capacity(c.txs.len());
        for q in c.txs {
            let key = q.call.key();
            let (valid, rejection) = match self.state.check(&q.call) {
                Ok(()) => {
                    self.state.apply(&q.call, self.genesis_epoch_ms + committed_at);
                    (true, None)
                }
                Err(r) => (false, Some(r)),
            };
            let outcome = match &rejection {
                None => Outcome::Committed { block_number: number },
                Some(r) => Outcome::Rejected { stage: RejectStage::Validation, reason: r.clone() },
            };
            self.receipts.push(Receipt {
                ticket: q.ticket,
                key,
                submitted_at: q.submitted_at,
                completed_at: committed_at,
                outcome,
            });
            entries.push(BlockEntry { ticket: q.ticket, call: q.call, valid, rejection });
        }
        self.blocks.push(Block { number, cut_at: c.cut_at, committed_at, entries });
    }

    pub fn export_block_log(&self, out: impl Write) -> io::Result<()> {
        write_block_log(&self.blocks, out)
    }
}

/// One JSON object per line.
pub fn write_block_log(blocks: &[Block], mut out: impl Write) -> io::Result<()> {
    for b in blocks {
        serde_json::to_writer(&mut out, b)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_block_log(input: impl BufRead) -> Result<Vec<Block>, LedgerError> {
    let mut blocks = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| LedgerError::BlockLog(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let block: Block = serde_json::from_str(&line)
            .map_err(|e| LedgerError::BlockLog(format!("line {}: {e}", i + 1)))?;
        blocks.push(block);
    }
    Ok(blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cid::cid_of;
    use crate::proof::RollupStatement;
    use crate::tx::{pad_batch, random_transaction};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn ledger(model: LatencyModel) -> Ledger {
        Ledger::new(model, Arc::new(ProofSystem::reference()), 1_700_000_000_000).unwrap()
    }

    fn asset(id: &str) -> LedgerCall {
        LedgerCall::CreateAsset {
            asset_id: id.into(),
            participant: "org1-user".into(),
            asset_cid: cid_of(id.as_bytes()).to_string(),
        }
    }

    fn run_until_idle(l: &mut Ledger) -> Vec<Receipt> {
        while let Some(t) = l.next_event_at() {
            l.advance_to(t).unwrap();
        }
        l.take_receipts()
    }

    fn submission(n: u64, seed: u64) -> BatchSubmission {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let txs: Vec<_> = (0..3).map(|i| random_transaction(&mut rng, i)).collect();
        let draft = pad_batch(&txs).unwrap();
        let st = RollupStatement::from_leaves(draft.leaves);
        let proof = ProofSystem::reference().prove(&st).unwrap();
        BatchSubmission {
            batch_number: n,
            merkle_root: st.public_root,
            ipfs_cid: cid_of(&seed.to_be_bytes()),
            tx_count: 3,
            proof: proof.proof_bytes,
        }
    }

    #[test]
    fn instant_model_commits_immediately() {
        let mut l = ledger(LatencyModel::INSTANT);
        l.submit(asset("a1"), 0).unwrap();
        let r = l.take_receipts();
        assert_eq!(r.len(), 1);
        assert!(r[0].is_committed());
        assert_eq!(r[0].latency_ms(), 0);
        assert!(l.get_asset("a1").is_some());
    }

    #[test]
    fn duplicate_asset_rejected_without_state_change() {
        let mut l = ledger(LatencyModel::INSTANT);
        l.submit(asset("a1"), 0).unwrap();
        let before = l.state().clone();
        l.submit(asset("a1"), 5).unwrap();
        let r = l.take_receipts();
        assert!(matches!(
            r[1].outcome,
            Outcome::Rejected { stage: RejectStage::Endorsement, reason: Rejection::DuplicateKey(_) }
        ));
        assert_eq!(l.state(), &before);
    }

    #[test]
    fn concurrent_duplicates_caught_at_validation() {
        let mut l = ledger(LatencyModel::CALIBRATED);
        l.submit(asset("x"), 0).unwrap();
        l.submit(asset("x"), 10).unwrap();
        let r = run_until_idle(&mut l);
        assert_eq!(r.len(), 2);
        assert!(r[0].is_committed());
        assert!(matches!(r[1].outcome, Outcome::Rejected { stage: RejectStage::Validation, .. }));
        assert_eq!(l.blocks().len(), 1);
        assert!(!l.blocks()[0].entries[1].valid);
    }

    #[test]
    fn lone_transaction_latency_matches_closed_form() {
        let model = LatencyModel::CALIBRATED;
        for t0 in [0u64, 1, 699, 700, 701, 1700, 1999, 2000, 3333] {
            let mut l = ledger(model);
            l.advance_to(t0).unwrap();
            l.submit(asset("solo"), t0).unwrap();
            let r = run_until_idle(&mut l);
            let latency = r[0].latency_ms();
            assert_eq!(latency, model.lone_latency(t0));
            assert!((1000..=1000 + model.block_interval_ms).contains(&latency), "{latency}");
        }
    }

    #[test]
    fn blocks_respect_capacity_and_interval() {
        let model = LatencyModel::CALIBRATED;
        let mut l = ledger(model);
        for i in 0..40 {
            l.submit(asset(&format!("a{i}")), 0).unwrap();
        }
        let r = run_until_idle(&mut l);
        assert_eq!(r.len(), 40);
        let sizes: Vec<usize> = l.blocks().iter().map(|b| b.entries.len()).collect();
        assert_eq!(sizes, vec![13, 13, 13, 1]);
        let cuts: Vec<u64> = l.blocks().iter().map(|b| b.cut_at).collect();
        assert_eq!(cuts, vec![2000, 4000, 6000, 8000]);
        assert_eq!(l.blocks()[0].committed_at, 2700);
    }

    #[test]
    fn batch_commit_happy_path_and_replay_protection() {
        let mut l = ledger(LatencyModel::CALIBRATED);
        let s1 = submission(1, 1);
        l.submit(LedgerCall::CommitBatch(s1.clone()), 0).unwrap();
        assert!(run_until_idle(&mut l)[0].is_committed());
        let c = l.get_batch(1).unwrap();
        assert_eq!(c.merkle_root, s1.merkle_root);
        assert_eq!(c.ipfs_cid, s1.ipfs_cid);
        assert_eq!(c.committed_at, 1_700_000_000_000 + 2700);
        // Individual transactions are never written.
        assert!(l.state().keys().all(|k| k.starts_with("BATCH_")));

        let now = l.now();
        l.submit(LedgerCall::CommitBatch(s1), now).unwrap();
        let r = run_until_idle(&mut l);
        assert!(matches!(r[0].outcome, Outcome::Rejected { .. }));
        let gap = submission(3, 3);
        let now = l.now();
        l.submit(LedgerCall::CommitBatch(gap), now).unwrap();
        let r = run_until_idle(&mut l);
        assert!(matches!(
            r[0].outcome,
            Outcome::Rejected { reason: Rejection::OutOfSequence { expected: 2, got: 3 }, .. }
        ));
    }

    #[test]
    fn invalid_proofs_never_write() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let mut l = ledger(LatencyModel::INSTANT);
        let other = submission(1, 77);
        for case in 0..120 {
            let mut s = submission(1, case);
            match case % 3 {
                0 => s.merkle_root = other.merkle_root,
                1 => {
                    let bit = rng.gen_range(0..s.proof.len() * 8);
                    s.proof[bit / 8] ^= 1 << (bit % 8);
                }
                _ => s.proof.truncate(rng.gen_range(0..s.proof.len())),
            }
            let before = l.state().clone();
            let blocks = l.blocks().len();
            let now = l.now();
            l.submit(LedgerCall::CommitBatch(s), now).unwrap();
            let r = run_until_idle(&mut l);
            assert!(!r[0].is_committed(), "case {case}");
            assert_eq!(l.state(), &before);
            assert_eq!(l.blocks().len(), blocks);
        }
    }

    #[test]
    fn block_log_round_trips_and_replays() {
        let mut l = ledger(LatencyModel::CALIBRATED);
        for i in 0..30 {
            l.submit(asset(&format!("a{}", i % 25)), i * 97).unwrap();
        }
        l.submit(LedgerCall::CommitBatch(submission(1, 5)), 3000).unwrap();
        run_until_idle(&mut l);
        let mut buf = Vec::new();
        l.export_block_log(&mut buf).unwrap();
        let blocks = read_block_log(buf.as_slice()).unwrap();
        assert_eq!(blocks, l.blocks());
        let replayed = WorldState::replay(&blocks, l.genesis_epoch_ms()).unwrap();
        assert_eq!(&replayed, l.state());
    }

    #[test]
    fn same_schedule_same_block_log() {
        let schedule = |l: &mut Ledger| {
            let mut rng = ChaCha20Rng::seed_from_u64(4);
            let mut t = 0;
            for i in 0..200 {
                t += rng.gen_range(0..200);
                l.submit(asset(&format!("a{}", rng.gen_range(0..150))), t).unwrap();
                if i % 50 == 0 {
                    l.advance_to(t + 1).unwrap();
                    t += 1;
                }
            }
            run_until_idle(l);
        };
        let mut a = ledger(LatencyModel::CALIBRATED);
        let mut b = ledger(LatencyModel::CALIBRATED);
        schedule(&mut a);
        schedule(&mut b);
        assert_eq!(a.blocks(), b.blocks());
    }

    #[test]
    fn time_cannot_go_backwards() {
        let mut l = ledger(LatencyModel::INSTANT);
        l.advance_to(10).unwrap();
        assert!(matches!(l.advance_to(5), Err(LedgerError::TimeTravel { .. })));
        let bad = LatencyModel { max_tx_per_block: 0, ..LatencyModel::INSTANT };
        assert!(Ledger::new(bad, Arc::new(ProofSystem::reference()), 0).is_err());
    }
}
