//! Wall-clock driver for the ledger core.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use async_trait::async_trait;
use parking_lot::Mutex;
use tokio::sync::{oneshot, Notify};
use tokio::task::JoinHandle;
use tokio::time::Instant;

use super::{Block, BatchCommitment, LatencyModel, Ledger, LedgerCall, LedgerError, Receipt};
use crate::proof::ProofSystem;

struct Shared {
    core: Mutex<Ledger>,
    waiters: Mutex<HashMap<u64, oneshot::Sender<Receipt>>>,
    wake: Arc<Notify>,
    start: Instant,
}

impl Shared {
    fn now_ms(&self) -> u64 {
        self.start.elapsed().as_millis() as u64
    }

    /// Advances the core to the current time and hands out receipts.
    fn pump(&self) -> Option<u64> {
        let mut core = self.core.lock();
        let now = self.now_ms().max(core.now());
        core.advance_to(now).expect("clock is monotonic");
        let receipts = core.take_receipts();
        let next = core.next_event_at();
        if !receipts.is_empty() {
            let mut waiters = self.waiters.lock();
            for r in receipts {
                if let Some(tx) = waiters.remove(&r.ticket) {
                    let _ = tx.send(r);
                }
            }
        }
        next
    }
}

struct Driver(JoinHandle<()>);

impl Drop for Driver {
    fn drop(&mut self) {
        self.0.abort();
    }
}

/// The ledger operations the sequencer relies on. [`LiveLedger`] is the
/// production implementation; tests substitute their own.
#[async_trait]
pub trait LedgerClient: Send + Sync {
    /// Submits a call and waits for its receipt.
    async fn submit(&self, call: LedgerCall) -> Receipt;
    fn get_batch(&self, n: u64) -> Option<BatchCommitment>;
    fn last_batch_number(&self) -> u64;
    fn block_count(&self) -> usize;
    fn query(&self, key: &str) -> Option<Vec<u8>>;
}

/// Shared handle to a ledger whose simulated clock follows real time.
/// Cloning is cheap; the driver task stops when the last clone is dropped.
#[derive(Clone)]
pub struct LiveLedger {
    shared: Arc<Shared>,
    _driver: Arc<Driver>,
}

impl std::fmt::Debug for LiveLedger {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LiveLedger").field("core", &*self.shared.core.lock()).finish()
    }
}

impl LiveLedger {
    /// Must be called inside a tokio runtime.
    pub fn start(model: LatencyModel, verifier: Arc<ProofSystem>) -> Result<Self, LedgerError> {
        let epoch = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
        let core = Ledger::new(model, verifier, epoch.as_millis() as u64)?;
        let shared = Arc::new(Shared {
            core: Mutex::new(core),
            waiters: Mutex::new(HashMap::new()),
            wake: Arc::new(Notify::new()),
            start: Instant::now(),
        });
        let weak = Arc::downgrade(&shared);
        let wake = shared.wake.clone();
        let handle = tokio::spawn(async move {
            loop {
                let Some(shared) = weak.upgrade() else { return };
                let next = shared.pump();
                let deadline = next.map(|ms| shared.start + Duration::from_millis(ms));
                let woken = wake.notified();
                tokio::pin!(woken);
                // Register interest before releasing the strong reference.
                woken.as_mut().enable();
                drop(shared);
                match deadline {
                    Some(d) => {
                        tokio::select! {
                            _ = tokio::time::sleep_until(d) => {}
                            _ = &mut woken => {}
                        }
                    }
                    None => woken.await,
                }
            }
        });
        Ok(LiveLedger { shared, _driver: Arc::new(Driver(handle)) })
    }

    /// Submits a call and waits for its receipt.
    pub async fn submit(&self, call: LedgerCall) -> Receipt {
        let rx = {
            let mut core = self.shared.core.lock();
            let now = self.shared.now_ms().max(core.now());
            let ticket = core.submit(call, now).expect("clock is monotonic");
            let (tx, rx) = oneshot::channel();
            self.shared.waiters.lock().insert(ticket, tx);
            rx
        };
        // The core may already hold the receipt (zero delays).
        self.shared.pump();
        self.shared.wake.notify_one();
        rx.await.expect("ledger driver dropped a waiter")
    }

    pub fn now_ms(&self) -> u64 {
        self.shared.now_ms()
    }

    pub fn model(&self) -> LatencyModel {
        *self.shared.core.lock().model()
    }

    pub fn query(&self, key: &str) -> Option<Vec<u8>> {
        self.shared.core.lock().query(key).map(<[u8]>::to_vec)
    }

    pub fn get_batch(&self, n: u64) -> Option<BatchCommitment> {
        self.shared.core.lock().get_batch(n)
    }

    pub fn last_batch_number(&self) -> u64 {
        self.shared.core.lock().last_batch_number()
    }

    pub fn blocks(&self) -> Vec<Block> {
        self.shared.core.lock().blocks().to_vec()
    }

    pub fn block_count(&self) -> usize {
        self.shared.core.lock().blocks().len()
    }

    pub fn in_flight(&self) -> usize {
        self.shared.core.lock().in_flight()
    }

    /// Runs `f` against the core under its lock.
    pub fn with_core<R>(&self, f: impl FnOnce(&Ledger) -> R) -> R {
        f(&self.shared.core.lock())
    }
}

#[async_trait]
impl LedgerClient for LiveLedger {
    async fn submit(&self, call: LedgerCall) -> Receipt {
        LiveLedger::submit(self, call).await
    }

    fn get_batch(&self, n: u64) -> Option<BatchCommitment> {
        LiveLedger::get_batch(self, n)
    }

    fn last_batch_number(&self) -> u64 {
        LiveLedger::last_batch_number(self)
    }

    fn block_count(&self) -> usize {
        LiveLedger::block_count(self)
    }

    fn query(&self, key: &str) -> Option<Vec<u8>> {
        LiveLedger::query(self, key)
    }
}
