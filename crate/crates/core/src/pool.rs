//! FIFO transaction pool with an optional append-only journal.
//!
//! Entries move `pending -> in flight -> acked | requeued | dead`. Capacity
//! counts pending plus in-flight entries, so a stalled settlement pushes back
//! on ingestion. Only enqueue, ack and dead-letter are journaled: after a
//! restart every unacknowledged entry is pending again (at-least-once).

use std::collections::{BTreeMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Notify;

use crate::tx::Transaction;

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("pool is full ({capacity} entries)")]
    Full { capacity: usize },
    #[error("pool journal: {0}")]
    Journal(#[from] io::Error),
    #[error("pool journal line {line}: {message}")]
    Corrupt { line: usize, message: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PoolEntry {
    pub id: u64,
    pub tx: Transaction,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
enum JournalRecord {
    Enq { id: u64, tx: Transaction },
    Ack { ids: Vec<u64> },
    Dead { ids: Vec<u64> },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PoolStats {
    pub pending: usize,
    pub in_flight: usize,
    pub dead_letter: usize,
    pub enqueued: u64,
    pub acked: u64,
    pub requeued: u64,
    pub rejected_full: u64,
}

#[derive(Default)]
struct Inner {
    pending: VecDeque<PoolEntry>,
    in_flight: BTreeMap<u64, PoolEntry>,
    dead: BTreeMap<u64, PoolEntry>,
    next_id: u64,
    stats: PoolStats,
    journal: Option<BufWriter<File>>,
}

impl Inner {
    fn log(&mut self, rec: &JournalRecord) -> io::Result<()> {
        if let Some(j) = self.journal.as_mut() {
            serde_json::to_writer(&mut *j, rec)?;
            j.write_all(b"\n")?;
            j.flush()?;
        }
        Ok(())
    }
}

pub struct TxPool {
    capacity: usize,
    inner: Mutex<Inner>,
    /// Signalled when pending reaches a full batch.
    batch_ready: Notify,
    batch_size: usize,
}

impl std::fmt::Debug for TxPool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TxPool").field("capacity", &self.capacity).field("stats", &self.stats()).finish()
    }
}

impl TxPool {
    pub fn new(capacity: usize, batch_size: usize) -> Self {
        TxPool {
            capacity,
            inner: Mutex::new(Inner { next_id: 1, ..Inner::default() }),
            batch_ready: Notify::new(),
            batch_size,
        }
    }

    /// Opens (or creates) a journaled pool, restoring unacknowledged entries
    /// in their original order.
    pub fn open(path: &Path, capacity: usize, batch_size: usize) -> Result<Self, PoolError> {
        let pool = TxPool::new(capacity, batch_size);
        {
            let mut inner = pool.inner.lock();
            if path.exists() {
                let mut live: BTreeMap<u64, PoolEntry> = BTreeMap::new();
                for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
                    let line = line?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let rec: JournalRecord = serde_json::from_str(&line)
                        .map_err(|e| PoolError::Corrupt { line: i + 1, message: e.to_string() })?;
                    match rec {
                        JournalRecord::Enq { id, tx } => {
                            inner.next_id = inner.next_id.max(id + 1);
                            live.insert(id, PoolEntry { id, tx });
                        }
                        JournalRecord::Ack { ids } => {
                            for id in ids {
                                live.remove(&id);
                            }
                        }
                        JournalRecord::Dead { ids } => {
                            for id in ids {
                                if let Some(e) = live.remove(&id) {
                                    inner.dead.insert(id, e);
                                }
                            }
                        }
                    }
                }
                inner.pending = live.into_values().collect();
            }
            let file = OpenOptions::new().create(true).append(true).open(path)?;
            inner.journal = Some(BufWriter::new(file));
        }
        Ok(pool)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Appends at the tail and returns the tracking id.
    pub fn push(&self, tx: Transaction) -> Result<u64, PoolError> {
        let mut inner = self.inner.lock();
        if inner.pending.len() + inner.in_flight.len() >= self.capacity {
            inner.stats.rejected_full += 1;
            return Err(PoolError::Full { capacity: self.capacity });
        }
        let id = inner.next_id;
        inner.log(&JournalRecord::Enq { id, tx: tx.clone() })?;
        inner.next_id += 1;
        inner.pending.push_back(PoolEntry { id, tx });
        inner.stats.enqueued += 1;
        let ready = inner.pending.len() >= self.batch_size;
        drop(inner);
        if ready {
            self.batch_ready.notify_one();
        }
        Ok(id)
    }

    /// Moves up to `max` of the oldest pending entries to in-flight.
    pub fn take(&self, max: usize) -> Vec<PoolEntry> {
        let mut inner = self.inner.lock();
        let n = inner.pending.len().min(max);
        let taken: Vec<PoolEntry> = inner.pending.drain(..n).collect();
        for e in &taken {
            inner.in_flight.insert(e.id, e.clone());
        }
        taken
    }

    /// Settled: forget these entries for good.
    pub fn ack(&self, ids: &[u64]) -> Result<(), PoolError> {
        let mut inner = self.inner.lock();
        inner.log(&JournalRecord::Ack { ids: ids.to_vec() })?;
        for id in ids {
            if inner.in_flight.remove(id).is_some() {
                inner.stats.acked += 1;
            }
        }
        Ok(())
    }

    /// Returns in-flight entries to the head of the queue, keeping their order.
    pub fn requeue_front(&self, entries: &[PoolEntry]) {
        let mut inner = self.inner.lock();
        for e in entries.iter().rev() {
            if let Some(e) = inner.in_flight.remove(&e.id) {
                inner.pending.push_front(e);
                inner.stats.requeued += 1;
            }
        }
    }

    /// Gives up on in-flight entries; they stay visible for reconciliation.
    pub fn dead_letter(&self, entries: &[PoolEntry]) -> Result<(), PoolError> {
        let mut inner = self.inner.lock();
        let ids: Vec<u64> = entries.iter().map(|e| e.id).collect();
        inner.log(&JournalRecord::Dead { ids: ids.clone() })?;
        for id in ids {
            if let Some(e) = inner.in_flight.remove(&id) {
                inner.dead.insert(id, e);
            }
        }
        Ok(())
    }

    pub fn pending_len(&self) -> usize {
        self.inner.lock().pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending_len() == 0
    }

    pub fn stats(&self) -> PoolStats {
        let inner = self.inner.lock();
        PoolStats {
            pending: inner.pending.len(),
            in_flight: inner.in_flight.len(),
            dead_letter: inner.dead.len(),
            ..inner.stats
        }
    }

    pub fn pending_ids(&self) -> Vec<u64> {
        self.inner.lock().pending.iter().map(|e| e.id).collect()
    }

    pub fn in_flight_ids(&self) -> Vec<u64> {
        self.inner.lock().in_flight.keys().copied().collect()
    }

    pub fn dead_letter_ids(&self) -> Vec<u64> {
        self.inner.lock().dead.keys().copied().collect()
    }

    /// Resolves once at least one full batch is pending.
    pub async fn batch_ready(&self) {
        loop {
            let notified = self.batch_ready.notified();
            if self.pending_len() >= self.batch_size {
                return;
            }
            notified.await;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tx::random_transaction;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn txs(n: usize) -> Vec<Transaction> {
        let mut rng = ChaCha20Rng::seed_from_u64(n as u64);
        (0..n).map(|i| random_transaction(&mut rng, i as u64)).collect()
    }

    #[test]
    fn fifo_take_and_ack() {
        let pool = TxPool::new(100, 32);
        let ids: Vec<u64> = txs(10).into_iter().map(|t| pool.push(t).unwrap()).collect();
        assert_eq!(ids, (1..=10).collect::<Vec<_>>());
        let first = pool.take(4);
        assert_eq!(first.iter().map(|e| e.id).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
        assert_eq!(pool.stats().in_flight, 4);
        pool.ack(&[1, 2, 3, 4]).unwrap();
        assert_eq!(pool.stats().in_flight, 0);
        assert_eq!(pool.pending_ids(), (5..=10).collect::<Vec<_>>());
    }

    #[test]
    fn requeue_restores_head_in_order() {
        let pool = TxPool::new(100, 32);
        for t in txs(6) {
            pool.push(t).unwrap();
        }
        let taken = pool.take(3);
        pool.requeue_front(&taken);
        assert_eq!(pool.pending_ids(), vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(pool.take(3), taken);
    }

    #[test]
    fn capacity_counts_in_flight() {
        let pool = TxPool::new(3, 32);
        let mut batch = txs(5).into_iter();
        for t in batch.by_ref().take(3) {
            pool.push(t).unwrap();
        }
        let taken = pool.take(2);
        assert!(matches!(pool.push(batch.next().unwrap()), Err(PoolError::Full { capacity: 3 })));
        pool.ack(&taken.iter().map(|e| e.id).collect::<Vec<_>>()).unwrap();
        pool.push(batch.next().unwrap()).unwrap();
        assert_eq!(pool.stats().rejected_full, 1);
    }

    #[test]
    fn journal_replay_restores_unacked_entries() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pool.jsonl");
        {
            let pool = TxPool::open(&path, 100, 32).unwrap();
            for t in txs(8) {
                pool.push(t).unwrap();
            }
            let a = pool.take(3);
            pool.ack(&[a[0].id, a[1].id]).unwrap();
            let b = pool.take(1);
            pool.dead_letter(&b).unwrap();
            // a[2] is in flight when the process "crashes".
        }
        let pool = TxPool::open(&path, 100, 32).unwrap();
        assert_eq!(pool.pending_ids(), vec![3, 5, 6, 7, 8]);
        assert_eq!(pool.dead_letter_ids(), vec![4]);
        assert_eq!(pool.push(txs(1).remove(0)).unwrap(), 9);
    }

    #[tokio::test]
    async fn batch_ready_fires_at_threshold() {
        let pool = std::sync::Arc::new(TxPool::new(100, 4));
        let p = pool.clone();
        let waiter = tokio::spawn(async move { p.batch_ready().await });
        for t in txs(4) {
            pool.push(t).unwrap();
        }
        tokio::time::timeout(std::time::Duration::from_secs(2), waiter).await.unwrap().unwrap();
    }

    proptest! {
        #[test]
        fn any_take_sequence_preserves_arrival_order(chunks in proptest::collection::vec(1usize..10, 1..10)) {
            let pool = TxPool::new(1000, 32);
            let total: usize = chunks.iter().sum();
            for t in txs(total) {
                pool.push(t).unwrap();
            }
            let mut seen = Vec::new();
            for (i, c) in chunks.iter().enumerate() {
                let got = pool.take(*c);
                if i % 2 == 0 {
                    pool.requeue_front(&got);
                    let again = pool.take(*c);
                    prop_assert_eq!(&again, &got);
                }
                seen.extend(got.iter().map(|e| e.id));
            }
            prop_assert_eq!(seen, (1..=total as u64).collect::<Vec<_>>());
        }
    }
}
