//! Batched transaction settlement: a BN254 Poseidon Merkle tree over 32
//! transactions, a proof that the published root commits to them, a
//! content-addressed payload store and a simulated permissioned ledger.

pub mod cid;
pub mod config;
pub mod field;
pub mod ledger;
pub mod merkle;
pub mod pool;
pub mod poseidon;
pub mod proof;
pub mod sequencer;
pub mod service;
pub mod sim;
pub mod stats;
pub mod store;
pub mod tx;

pub use cid::Cid;
pub use config::Config;
pub use field::FieldElement;
pub use ledger::live::{LedgerClient, LiveLedger};
pub use ledger::{LatencyModel, Ledger, LedgerCall, Outcome, Receipt};
pub use merkle::MerkleTree32;
pub use pool::TxPool;
pub use proof::{BackendTag, ProofSystem, RollupProof, RollupStatement};
pub use sequencer::{Sequencer, SequencerOptions, SettlementRecord, SettlementStatus};
pub use service::App;
pub use store::{BatchPayload, BlobStore, LocalStore, MemoryStore};
pub use tx::Transaction;
