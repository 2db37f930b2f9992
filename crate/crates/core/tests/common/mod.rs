#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use zkrollup_core::cid::Cid;
use zkrollup_core::ledger::BatchCommitment;
use zkrollup_core::proof::{BatchProver, ProofError, RollupStatement};
use zkrollup_core::store::{BlobStore, StoreError};
use zkrollup_core::tx::random_transaction;
use zkrollup_core::{LatencyModel, LedgerCall, LedgerClient, LiveLedger, Receipt, MemoryStore, ProofSystem, RollupProof, Sequencer, SequencerOptions, Transaction, TxPool};

pub fn txs(seed: u64, n: usize) -> Vec<Transaction> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..n).map(|i| random_transaction(&mut rng, 1_700_000_000_000 + i as u64)).collect()
}

/// Fails the first `failures` calls, then delegates.
pub struct FlakyProver {
    pub inner: ProofSystem,
    pub failures: AtomicUsize,
}

impl FlakyProver {
    pub fn failing(n: usize) -> Self {
        FlakyProver { inner: ProofSystem::reference(), failures: AtomicUsize::new(n) }
    }
}

impl BatchProver for FlakyProver {
    fn prove(&self, s: &RollupStatement) -> Result<RollupProof, ProofError> {
        if self.failures.load(Ordering::SeqCst) > 0 {
            self.failures.fetch_sub(1, Ordering::SeqCst);
            return Err(ProofError::Backend("injected prover failure".into()));
        }
        self.inner.prove(s)
    }
}

/// Produces proofs with one flipped byte, which the ledger must refuse.
pub struct CorruptingProver(pub ProofSystem);

impl BatchProver for CorruptingProver {
    fn prove(&self, s: &RollupStatement) -> Result<RollupProof, ProofError> {
        let mut p = self.0.prove(s)?;
        let last = p.proof_bytes.len() - 1;
        p.proof_bytes[last] ^= 0x01;
        Ok(p)
    }
}

pub struct SlowProver(pub ProofSystem, pub Duration);

impl BatchProver for SlowProver {
    fn prove(&self, s: &RollupStatement) -> Result<RollupProof, ProofError> {
        std::thread::sleep(self.1);
        self.0.prove(s)
    }
}

pub struct DownStore;

impl BlobStore for DownStore {
    fn put(&self, _: &[u8]) -> Result<Cid, StoreError> {
        Err(StoreError::Unavailable("injected store outage".into()))
    }
    fn get(&self, cid: &Cid) -> Result<Vec<u8>, StoreError> {
        Err(StoreError::NotFound(cid.clone()))
    }
}

/// Holds every submission for a fixed time before passing it on.
pub struct SlowLedger(pub LiveLedger, pub Duration);

#[async_trait]
impl LedgerClient for SlowLedger {
    async fn submit(&self, call: LedgerCall) -> Receipt {
        tokio::time::sleep(self.1).await;
        self.0.submit(call).await
    }
    fn get_batch(&self, n: u64) -> Option<BatchCommitment> {
        self.0.get_batch(n)
    }
    fn last_batch_number(&self) -> u64 {
        self.0.last_batch_number()
    }
    fn block_count(&self) -> usize {
        self.0.block_count()
    }
    fn query(&self, key: &str) -> Option<Vec<u8>> {
        self.0.query(key)
    }
}

pub struct Rig {
    pub sequencer: Arc<Sequencer>,
    pub store: Arc<MemoryStore>,
    pub verifier: Arc<ProofSystem>,
}

pub fn rig_with(prover: Arc<dyn BatchProver>, store: Option<Arc<dyn BlobStore>>, max_retries: u32) -> Rig {
    rig_over(prover, store, max_retries, |l| Arc::new(l))
}

/// Like [`rig_with`], with the ledger wrapped by `wrap`.
pub fn rig_over(
    prover: Arc<dyn BatchProver>,
    store: Option<Arc<dyn BlobStore>>,
    max_retries: u32,
    wrap: impl FnOnce(LiveLedger) -> Arc<dyn LedgerClient>,
) -> Rig {
    let verifier = Arc::new(ProofSystem::reference());
    let mem = Arc::new(MemoryStore::new());
    let store = store.unwrap_or_else(|| mem.clone());
    let ledger = LiveLedger::start(LatencyModel::INSTANT, verifier.clone()).unwrap();
    let options = SequencerOptions { settle_interval: Duration::from_millis(50), max_retries };
    let sequencer = Arc::new(Sequencer::new(Arc::new(TxPool::new(10_000, 32)), prover, store, wrap(ledger), options));
    Rig { sequencer, store: mem, verifier }
}

pub fn rig() -> Rig {
    rig_with(Arc::new(ProofSystem::reference()), None, 5)
}
