//! Transactions, their canonical encoding, and batch padding.
//!
//! Canonical form is compact JSON with the keys in this fixed order:
//!
//! ```text
//! {"assetId":"…","participant":"…","assetCid":"…","clientTimestamp":<u64>}
//! ```
//!
//! A transaction's Merkle leaf is `SHA-256(canonical bytes)`, read as a
//! big-endian integer and reduced modulo the field prime. Padding slots hold
//! the leaf of the reserved sentinel
//! `{"assetId":"DUMMY","participant":"DUMMY","assetCid":<cid of empty bytes>,"clientTimestamp":0}`,
//! i.e. `0x0255afa494063ff18c3fccf90b6169fde4a2a102fb97627d88e29987ba00f3af`.

use std::sync::OnceLock;

use rand::distributions::Alphanumeric;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cid::{cid_of, Cid};
use crate::field::FieldElement;
use crate::merkle::LEAVES;

pub const MAX_BATCH: usize = LEAVES;
pub const MAX_IDENTIFIER_BYTES: usize = 256;
pub const DUMMY_ASSET_ID: &str = "DUMMY";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TxError {
    #[error("{0} must not be empty")]
    Empty(&'static str),
    #[error("{0} exceeds {MAX_IDENTIFIER_BYTES} bytes")]
    TooLong(&'static str),
    #[error("{0} contains control characters")]
    ControlCharacter(&'static str),
    #[error("assetId `{DUMMY_ASSET_ID}` is reserved for padding")]
    ReservedAssetId,
    #[error("assetCid is not a valid CID: {0}")]
    InvalidCid(String),
    #[error("a batch needs at least one transaction")]
    EmptyBatch,
    #[error("a batch holds at most {MAX_BATCH} transactions, got {0}")]
    BatchTooLarge(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Transaction {
    pub asset_id: String,
    pub participant: String,
    pub asset_cid: String,
    pub client_timestamp: u64,
}

fn check_identifier(field: &'static str, value: &str) -> Result<(), TxError> {
    if value.is_empty() {
        return Err(TxError::Empty(field));
    }
    if value.len() > MAX_IDENTIFIER_BYTES {
        return Err(TxError::TooLong(field));
    }
    if value.chars().any(char::is_control) {
        return Err(TxError::ControlCharacter(field));
    }
    Ok(())
}

impl Transaction {
    pub fn new(
        asset_id: impl Into<String>,
        participant: impl Into<String>,
        asset_cid: impl Into<String>,
        client_timestamp: u64,
    ) -> Self {
        Transaction {
            asset_id: asset_id.into(),
            participant: participant.into(),
            asset_cid: asset_cid.into(),
            client_timestamp,
        }
    }

    pub fn validate(&self) -> Result<(), TxError> {
        check_identifier("assetId", &self.asset_id)?;
        if self.asset_id == DUMMY_ASSET_ID {
            return Err(TxError::ReservedAssetId);
        }
        check_identifier("participant", &self.participant)?;
        self.asset_cid
            .parse::<Cid>()
            .map_err(|e| TxError::InvalidCid(e.to_string()))?;
        Ok(())
    }

    pub fn canonical_bytes(&self) -> Result<Vec<u8>, TxError> {
        self.validate()?;
        Ok(self.encode())
    }

    pub fn leaf(&self) -> Result<FieldElement, TxError> {
        self.validate()?;
        Ok(leaf_of_bytes(&self.encode()))
    }

    fn encode(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("transaction serialization is infallible")
    }
}

fn leaf_of_bytes(bytes: &[u8]) -> FieldElement {
    FieldElement::from_be_bytes_mod_order(&Sha256::digest(bytes).into())
}

/// Free-function form of [`Transaction::canonical_bytes`].
pub fn canonical_bytes(tx: &Transaction) -> Result<Vec<u8>, TxError> {
    tx.canonical_bytes()
}

/// Free-function form of [`Transaction::leaf`].
pub fn leaf_encode(tx: &Transaction) -> Result<FieldElement, TxError> {
    tx.leaf()
}

/// The sentinel transaction whose leaf fills padding slots.
pub fn dummy_transaction() -> Transaction {
    Transaction::new(DUMMY_ASSET_ID, DUMMY_ASSET_ID, cid_of(b"").to_string(), 0)
}

pub fn dummy_leaf() -> FieldElement {
    static DUMMY: OnceLock<FieldElement> = OnceLock::new();
    // The sentinel fails `validate` on purpose, so encode it directly.
    *DUMMY.get_or_init(|| leaf_of_bytes(&dummy_transaction().encode()))
}

/// Up to 32 real transactions plus the padded leaf vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchDraft {
    pub transactions: Vec<Transaction>,
    pub leaves: [FieldElement; LEAVES],
    pub real_count: usize,
}

pub fn pad_batch(txs: &[Transaction]) -> Result<BatchDraft, TxError> {
    if txs.is_empty() {
        return Err(TxError::EmptyBatch);
    }
    if txs.len() > MAX_BATCH {
        return Err(TxError::BatchTooLarge(txs.len()));
    }
    let mut leaves = [dummy_leaf(); LEAVES];
    for (slot, tx) in leaves.iter_mut().zip(txs) {
        *slot = tx.leaf()?;
    }
    Ok(BatchDraft { transactions: txs.to_vec(), leaves, real_count: txs.len() })
}

/// Rebuilds the 32-leaf vector from real transactions alone, the way an
/// auditor holding a batch payload would.
pub fn padded_leaves(txs: &[Transaction]) -> Result<[FieldElement; LEAVES], TxError> {
    pad_batch(txs).map(|d| d.leaves)
}

fn random_suffix(rng: &mut impl Rng, len: usize) -> String {
    rng.sample_iter(&Alphanumeric).take(len).map(char::from).collect()
}

/// A randomized asset-creation transaction: random alphanumeric suffixes on
/// the asset and participant ids and a synthetic CID for the asset body.
pub fn random_transaction(rng: &mut impl Rng, client_timestamp: u64) -> Transaction {
    let org = rng.gen_range(1..=2);
    let mut body = [0u8; 32];
    rng.fill(&mut body);
    Transaction {
        asset_id: format!("asset-{}", random_suffix(rng, 16)),
        participant: format!("org{org}-user-{}", random_suffix(rng, 8)),
        asset_cid: cid_of(&body).to_string(),
        client_timestamp,
    }
}
