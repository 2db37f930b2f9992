//! TOML service configuration. Every key is optional; see
//! `config/sequencer.example.toml` for the full set with defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::LatencyModel;
use crate::proof::BackendTag;
use crate::tx::MAX_BATCH;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub server: ServerConfig,
    pub pool: PoolConfig,
    pub settlement: SettlementConfig,
    pub proof: ProofConfig,
    pub store: StoreConfig,
    pub ledger: LedgerConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub listen: String,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig { listen: "127.0.0.1:8080".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolConfig {
    /// Pending plus in-flight transactions before `/submit` answers 503.
    pub capacity: usize,
    /// Append-only journal; unacknowledged entries are restored on start.
    pub journal: Option<PathBuf>,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig { capacity: 100_000, journal: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SettlementConfig {
    pub interval_ms: u64,
    /// Fixed by the circuit; only 32 is accepted.
    pub batch_size: usize,
    pub max_retries: u32,
    /// One JSON line per settlement attempt.
    pub log: Option<PathBuf>,
}

impl Default for SettlementConfig {
    fn default() -> Self {
        SettlementConfig { interval_ms: 2000, batch_size: MAX_BATCH, max_retries: 5, log: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProofConfig {
    pub backend: BackendTag,
    /// Fixes the snark setup randomness.
    pub seed: Option<u64>,
}

impl Default for ProofConfig {
    fn default() -> Self {
        ProofConfig { backend: BackendTag::Reference, seed: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StoreBackend {
    Local,
    Memory,
    Ipfs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoreConfig {
    pub backend: StoreBackend,
    pub dir: PathBuf,
    /// Daemon RPC base URL for the `ipfs` backend.
    pub ipfs_api: Option<String>,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig { backend: StoreBackend::Local, dir: PathBuf::from("data/objects"), ipfs_api: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LedgerConfig {
    pub endorse_ms: u64,
    pub order_ms: u64,
    pub commit_ms: u64,
    pub block_interval_ms: u64,
    pub max_tx_per_block: usize,
    /// Written as JSON lines on shutdown.
    pub block_log: Option<PathBuf>,
}

impl Default for LedgerConfig {
    fn default() -> Self {
        LedgerConfig::from_model(LatencyModel::CALIBRATED)
    }
}

impl LedgerConfig {
    pub fn from_model(m: LatencyModel) -> Self {
        LedgerConfig {
            endorse_ms: m.endorse_ms,
            order_ms: m.order_ms,
            commit_ms: m.commit_ms,
            block_interval_ms: m.block_interval_ms,
            max_tx_per_block: m.max_tx_per_block,
            block_log: None,
        }
    }

    pub fn model(&self) -> LatencyModel {
        LatencyModel {
            endorse_ms: self.endorse_ms,
            order_ms: self.order_ms,
            commit_ms: self.commit_ms,
            block_interval_ms: self.block_interval_ms,
            max_tx_per_block: self.max_tx_per_block,
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: Config = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.settlement.batch_size != MAX_BATCH {
            return invalid("settlement.batch_size must be 32");
        }
        if self.pool.capacity == 0 {
            return invalid("pool.capacity must be positive");
        }
        if self.settlement.interval_ms == 0 {
            return invalid("settlement.interval_ms must be positive");
        }
        if self.store.backend == StoreBackend::Ipfs && self.store.ipfs_api.is_none() {
            return invalid("store.ipfs_api is required for the ipfs backend");
        }
        self.ledger.model().validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
