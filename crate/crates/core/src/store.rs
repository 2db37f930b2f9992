//! Content-addressed batch storage.
//!
//! Objects are named by [`Cid`]. The local backend keeps one file per object
//! (filename = CID text) and re-hashes on every read. The optional IPFS
//! backend talks to a daemon's `/api/v0/add` and `/api/v0/cat` endpoints and
//! checks that the daemon assigned the same identifier we compute locally.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cid::{cid_of, Cid};
use crate::tx::Transaction;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("object {0} not found")]
    NotFound(Cid),
    #[error("stored bytes for {0} do not hash to their identifier")]
    Integrity(Cid),
    #[error("storage I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("storage backend unavailable: {0}")]
    Unavailable(String),
    #[error("payload is not valid batch JSON: {0}")]
    Payload(#[from] serde_json::Error),
}

/// Put/get by content identifier. Puts are idempotent; nothing is ever
/// deleted or overwritten.
pub trait BlobStore: Send + Sync {
    fn put(&self, bytes: &[u8]) -> Result<Cid, StoreError>;
    fn get(&self, cid: &Cid) -> Result<Vec<u8>, StoreError>;
}

impl<S: BlobStore + ?Sized> BlobStore for Arc<S> {
    fn put(&self, bytes: &[u8]) -> Result<Cid, StoreError> {
        (**self).put(bytes)
    }
    fn get(&self, cid: &Cid) -> Result<Vec<u8>, StoreError> {
        (**self).get(cid)
    }
}

/// Off-chain record of one batch: the real (non-dummy) transactions in leaf
/// order, plus what an auditor needs to rebuild the padded leaf vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct BatchPayload {
    pub batch_number: u64,
    pub real_count: usize,
    pub created_at: u64,
    /// Sequencer tracking ids, parallel to `transactions`.
    pub tracking_ids: Vec<u64>,
    pub transactions: Vec<Transaction>,
}

impl BatchPayload {
    /// Compact JSON with keys in declaration order.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("payload serialization is infallible")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        Ok(serde_json::from_slice(bytes)?)
    }

    pub fn is_consistent(&self) -> bool {
        self.real_count == self.transactions.len() && self.real_count == self.tracking_ids.len()
    }
}

pub fn put_payload(store: &dyn BlobStore, payload: &BatchPayload) -> Result<Cid, StoreError> {
    store.put(&payload.canonical_bytes())
}

pub fn get_payload(store: &dyn BlobStore, cid: &Cid) -> Result<BatchPayload, StoreError> {
    BatchPayload::from_bytes(&store.get(cid)?)
}

/// Directory of immutable objects.
#[derive(Debug, Clone)]
pub struct LocalStore {
    dir: PathBuf,
}

impl LocalStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(LocalStore { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_of(&self, cid: &Cid) -> PathBuf {
        self.dir.join(cid.to_string())
    }
}

impl BlobStore for LocalStore {
    fn put(&self, bytes: &[u8]) -> Result<Cid, StoreError> {
        let cid = cid_of(bytes);
        let path = self.path_of(&cid);
        if path.exists() {
            return Ok(cid);
        }
        // Write-then-rename so readers never see a partial object.
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(&path).map_err(|e| StoreError::Io(e.error))?;
        Ok(cid)
    }

    fn get(&self, cid: &Cid) -> Result<Vec<u8>, StoreError> {
        let bytes = match fs::read(self.path_of(cid)) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(StoreError::NotFound(cid.clone()))
            }
            Err(e) => return Err(e.into()),
        };
        if !cid.matches(&bytes) {
            return Err(StoreError::Integrity(cid.clone()));
        }
        Ok(bytes)
    }
}

/// In-memory store for simulations and tests.
#[derive(Debug, Default)]
pub struct MemoryStore {
    objects: RwLock<HashMap<Cid, Arc<[u8]>>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.objects.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl BlobStore for MemoryStore {
    fn put(&self, bytes: &[u8]) -> Result<Cid, StoreError> {
        let cid = cid_of(bytes);
        self.objects.write().entry(cid.clone()).or_insert_with(|| bytes.into());
        Ok(cid)
    }

    fn get(&self, cid: &Cid) -> Result<Vec<u8>, StoreError> {
        let objects = self.objects.read();
        let bytes = objects.get(cid).ok_or_else(|| StoreError::NotFound(cid.clone()))?;
        Ok(bytes.to_vec())
    }
}

/// Client for an IPFS daemon's HTTP RPC API. Blocking; call it from a
/// blocking-capable context.
/// The blocking client owns a private runtime, so it is created on first use
/// (always from blocking code) and dropped off any async worker thread.
#[derive(Debug, Clone)]
pub struct IpfsHttpStore {
    api: String,
    client: OnceLock<reqwest::blocking::Client>,
}

#[derive(Deserialize)]
struct AddResponse {
    #[serde(rename = "Hash")]
    hash: String,
}

const MULTIPART_BOUNDARY: &str = "zkrollup-batch-payload-boundary";

impl IpfsHttpStore {
    /// `api` is the daemon base URL, e.g. `http://127.0.0.1:5001`.
    pub fn new(api: impl Into<String>) -> Result<Self, StoreError> {
        let api = api.into().trim_end_matches('/').to_string();
        if !(api.starts_with("http://") || api.starts_with("https://")) {
            return Err(StoreError::Unavailable(format!("not an http URL: {api}")));
        }
        Ok(IpfsHttpStore { api, client: OnceLock::new() })
    }

    fn client(&self) -> Result<&reqwest::blocking::Client, StoreError> {
        if let Some(c) = self.client.get() {
            return Ok(c);
        }
        let c = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(Self::unavailable)?;
        Ok(self.client.get_or_init(|| c))
    }

    fn unavailable(e: impl ToString) -> StoreError {
        StoreError::Unavailable(e.to_string())
    }
}

impl Drop for IpfsHttpStore {
    fn drop(&mut self) {
        if let Some(c) = self.client.take() {
            if tokio::runtime::Handle::try_current().is_ok() {
                std::thread::spawn(move || drop(c));
            }
        }
    }
}

impl BlobStore for IpfsHttpStore {
    fn put(&self, bytes: &[u8]) -> Result<Cid, StoreError> {
        let expected = cid_of(bytes);
        let mut body = Vec::with_capacity(bytes.len() + 256);
        write!(
            body,
            "--{MULTIPART_BOUNDARY}\r\nContent-Disposition: form-data; name=\"file\"; filename=\"batch.json\"\r\nContent-Type: application/octet-stream\r\n\r\n"
        )?;
        body.extend_from_slice(bytes);
        write!(body, "\r\n--{MULTIPART_BOUNDARY}--\r\n")?;
        // Payloads are far below the default chunk size, so raw leaves with
        // CIDv1 give exactly the identifier computed by `cid_of`.
        let url = format!("{}/api/v0/add?cid-version=1&raw-leaves=true&pin=true", self.api);
        let resp = self
            .client()?
            .post(url)
            .header(
                reqwest::header::CONTENT_TYPE,
                format!("multipart/form-data; boundary={MULTIPART_BOUNDARY}"),
            )
            .body(body)
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(Self::unavailable)?;
        let added: AddResponse = resp.json().map_err(Self::unavailable)?;
        let got: Cid = added.hash.parse().map_err(Self::unavailable)?;
        if got != expected {
            return Err(StoreError::Unavailable(format!(
                "daemon assigned {got}, expected {expected}"
            )));
        }
        Ok(expected)
    }

    fn get(&self, cid: &Cid) -> Result<Vec<u8>, StoreError> {
        let url = format!("{}/api/v0/cat?arg={cid}", self.api);
        let resp = self.client()?.post(url).send().map_err(Self::unavailable)?;
        if resp.status() == reqwest::StatusCode::NOT_FOUND {
            return Err(StoreError::NotFound(cid.clone()));
        }
        if !resp.status().is_success() {
            let status = resp.status();
            let text = resp.text().unwrap_or_default();
            if text.contains("not found") {
                return Err(StoreError::NotFound(cid.clone()));
            }
            return Err(StoreError::Unavailable(format!("{status}: {text}")));
        }
        let bytes = resp.bytes().map_err(Self::unavailable)?.to_vec();
        if !cid.matches(&bytes) {
            return Err(StoreError::Integrity(cid.clone()));
        }
        Ok(bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tx::random_transaction;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn payload(n: u64, count: usize, seed: u64) -> BatchPayload {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let transactions: Vec<_> =
            (0..count).map(|i| random_transaction(&mut rng, 1_700_000_000_000 + i as u64)).collect();
        BatchPayload {
            batch_number: n,
            real_count: count,
            created_at: 1_700_000_000_000,
            tracking_ids: (1..=count as u64).collect(),
            transactions,
        }
    }

    #[test]
    fn payload_keys_are_in_canonical_order() {
        let p = payload(3, 1, 1);
        let text = String::from_utf8(p.canonical_bytes()).unwrap();
        let keys = ["\"batchNumber\"", "\"realCount\"", "\"createdAt\"", "\"trackingIds\"", "\"transactions\""];
        let positions: Vec<usize> = keys.iter().map(|k| text.find(k).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]), "{text}");
        assert!(!text.contains(' '));
        assert_eq!(BatchPayload::from_bytes(text.as_bytes()).unwrap(), p);
    }

    #[test]
    fn local_round_trip_and_idempotence() {
        let dir = tempfile::tempdir().unwrap();
        let store = LocalStore::open(dir.path()).unwrap();
        let p = payload(1, 5, 2);
        let cid = put_payload(&store, &p).unwrap();
        assert_eq!(put_payload(&store, &p).unwrap(), cid);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
        assert_eq!(store.get(&cid).unwrap(), p.canonical_bytes());
        assert_eq!(get_payload(&store, &cid).unwrap(), p);
        assert_eq!(cid_of(&store.get(&cid).unwrap()), cid);
    }

    #[test]
    fn transaction_order_changes_the_cid() {
        let store = MemoryStore::new();
        let p = payload(1, 4, 3);
        let mut q = p.clone();
        q.transactions.swap(0, 1);
        q.tracking_ids.swap(0, 1);
        assert_ne!(put_payload(&store, &p).unwrap(), put_payload(&store, &q).unwrap());
    }

    #[test]
    fn unknown_cid_is_not_found() {
        let dir = tempfile::tempdir().unwrap();
        let local = LocalStore::open(dir.path()).unwrap();
        let mem = MemoryStore::new();
        let cid = cid_of(b"never stored");
        assert!(matches!(local.get(&cid), Err(StoreError::NotFound(_))));
        assert!(matches!(mem.get(&cid), Err(StoreError::NotFound(_))));
    }

    #[test]
    fn tampered_file_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let store = LocalStore::open(dir.path()).unwrap();
        let cid = put_payload(&store, &payload(2, 3, 4)).unwrap();
        let path = store.path_of(&cid);
        let mut bytes = fs::read(&path).unwrap();
        bytes[10] ^= 0x20;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(store.get(&cid), Err(StoreError::Integrity(_))));
    }

    #[test]
    fn memory_store_deduplicates() {
        let store = MemoryStore::new();
        let a = store.put(b"x").unwrap();
        let b = store.put(b"x").unwrap();
        assert_eq!(a, b);
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn unreachable_daemon_is_unavailable() {
        let store = IpfsHttpStore::new("http://127.0.0.1:9").unwrap();
        assert!(matches!(store.put(b"abc"), Err(StoreError::Unavailable(_))));
    }
}
