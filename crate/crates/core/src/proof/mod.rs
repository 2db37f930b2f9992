//! Proofs that a public Merkle root is the 32-leaf Poseidon tree root of some
//! witness leaf vector.
//!
//! Two backends share one interface:
//!
//! * `reference`: the proof carries the leaves and the verifier rebuilds the
//!   tree. Sound and fast, but not zero-knowledge.
//! * `snark` (cargo feature `snark`): a PLONK circuit with KZG commitments
//!   over BN254. Only the root is public; leaves stay in the witness.
//!
//! Serialized proofs start with a one-byte backend tag (`0x00` reference,
//! `0x01` snark) followed by backend-specific bytes.

mod reference;
#[cfg(feature = "snark")]
pub mod snark;

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::FieldElement;
use crate::merkle::{MerkleTree32, COMPRESSIONS, DEPTH, LEAVES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendTag {
    Reference,
    Snark,
}

impl BackendTag {
    pub fn byte(self) -> u8 {
        match self {
            BackendTag::Reference => 0x00,
            BackendTag::Snark => 0x01,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0x00 => Some(BackendTag::Reference),
            0x01 => Some(BackendTag::Snark),
            _ => None,
        }
    }
}

impl fmt::Display for BackendTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendTag::Reference => "reference",
            BackendTag::Snark => "snark",
        })
    }
}

impl FromStr for BackendTag {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reference" => Ok(BackendTag::Reference),
            "snark" => Ok(BackendTag::Snark),
            other => Err(format!("unknown proof backend `{other}`")),
        }
    }
}

#[derive(Debug, Error)]
pub enum ProofError {
    #[error("proof backend `{0}` is not available in this build")]
    BackendUnavailable(BackendTag),
    #[error("witness leaves do not hash to the claimed root {claimed}")]
    FalseStatement { claimed: FieldElement },
    #[error("proving failed: {0}")]
    Backend(String),
}

/// Public root plus witness leaves.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RollupStatement {
    pub public_root: FieldElement,
    pub leaves: [FieldElement; LEAVES],
}

impl RollupStatement {
    pub fn new(public_root: FieldElement, leaves: [FieldElement; LEAVES]) -> Self {
        RollupStatement { public_root, leaves }
    }

    /// Statement whose root is computed from the leaves (always true).
    pub fn from_leaves(leaves: [FieldElement; LEAVES]) -> Self {
        let root = MerkleTree32::build(&leaves).expect("32 leaves").root();
        RollupStatement { public_root: root, leaves }
    }

    pub fn holds(&self) -> bool {
        MerkleTree32::build(&self.leaves).map(|t| t.root() == self.public_root).unwrap_or(false)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RollupProof {
    pub backend: BackendTag,
    /// Tag byte followed by the backend payload.
    pub proof_bytes: Vec<u8>,
    pub public_root: FieldElement,
    pub prover_time: Duration,
}

impl RollupProof {
    /// Rebuilds a proof from what is stored on chain. The backend comes from
    /// the tag byte; `None` if it is missing or unknown.
    pub fn from_parts(public_root: FieldElement, proof_bytes: Vec<u8>) -> Option<Self> {
        let backend = BackendTag::from_byte(*proof_bytes.first()?)?;
        Some(RollupProof { backend, proof_bytes, public_root, prover_time: Duration::ZERO })
    }

    pub fn prover_time_ms(&self) -> f64 {
        self.prover_time.as_secs_f64() * 1e3
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.proof_bytes)
    }
}

/// Fixed circuit topology. Identical for every batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CircuitShape {
    pub leaves: usize,
    pub depth: usize,
    pub compression_gates: usize,
}

impl CircuitShape {
    pub const MERKLE32: CircuitShape =
        CircuitShape { leaves: LEAVES, depth: DEPTH, compression_gates: COMPRESSIONS };
}

pub enum ProvingKeyMaterial {
    Reference { shape: CircuitShape },
    #[cfg(feature = "snark")]
    Snark(Box<snark::SnarkMaterial>),
}

impl ProvingKeyMaterial {
    pub fn backend(&self) -> BackendTag {
        match self {
            ProvingKeyMaterial::Reference { .. } => BackendTag::Reference,
            #[cfg(feature = "snark")]
            ProvingKeyMaterial::Snark(_) => BackendTag::Snark,
        }
    }

    pub fn shape(&self) -> CircuitShape {
        match self {
            ProvingKeyMaterial::Reference { shape } => *shape,
            #[cfg(feature = "snark")]
            ProvingKeyMaterial::Snark(m) => m.shape(),
        }
    }

    /// Serialized setup artifacts; empty for the reference backend.
    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            ProvingKeyMaterial::Reference { .. } => Vec::new(),
            #[cfg(feature = "snark")]
            ProvingKeyMaterial::Snark(m) => m.to_bytes(),
        }
    }
}

impl fmt::Debug for ProvingKeyMaterial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProvingKeyMaterial")
            .field("backend", &self.backend())
            .field("shape", &self.shape())
            .finish()
    }
}

/// Builds the setup material for a backend. `seed` makes the snark setup
/// reproducible; without one it draws from the OS RNG.
pub fn setup(backend: BackendTag, seed: Option<u64>) -> Result<ProvingKeyMaterial, ProofError> {
    match backend {
        BackendTag::Reference => {
            let _ = seed;
            Ok(ProvingKeyMaterial::Reference { shape: CircuitShape::MERKLE32 })
        }
        #[cfg(feature = "snark")]
        BackendTag::Snark => snark::setup(seed).map(|m| ProvingKeyMaterial::Snark(Box::new(m))),
        #[cfg(not(feature = "snark"))]
        BackendTag::Snark => Err(ProofError::BackendUnavailable(BackendTag::Snark)),
    }
}

/// Proves a statement. False statements are refused before any backend work.
pub fn prove(
    material: &ProvingKeyMaterial,
    statement: &RollupStatement,
) -> Result<RollupProof, ProofError> {
    if !statement.holds() {
        return Err(ProofError::FalseStatement { claimed: statement.public_root });
    }
    let started = Instant::now();
    let proof_bytes = match material {
        ProvingKeyMaterial::Reference { .. } => reference::prove(statement),
        #[cfg(feature = "snark")]
        ProvingKeyMaterial::Snark(m) => m.prove(statement)?,
    };
    let prover_time = started.elapsed();
    Ok(RollupProof {
        backend: material.backend(),
        proof_bytes,
        public_root: statement.public_root,
        prover_time,
    })
}

/// Never panics on malformed input; anything unparseable is simply invalid.
pub fn verify(material: &ProvingKeyMaterial, proof: &RollupProof) -> bool {
    let Some((&tag, body)) = proof.proof_bytes.split_first() else {
        return false;
    };
    if tag != material.backend().byte() || proof.backend != material.backend() {
        return false;
    }
    match material {
        ProvingKeyMaterial::Reference { .. } => reference::verify(proof.public_root, body),
        #[cfg(feature = "snark")]
        ProvingKeyMaterial::Snark(m) => m.verify(proof.public_root, body),
    }
}

/// Anything that can turn a statement into a proof. The settlement pipeline
/// depends on this rather than on [`ProofSystem`] so tests can inject faults.
pub trait BatchProver: Send + Sync {
    fn prove(&self, statement: &RollupStatement) -> Result<RollupProof, ProofError>;
}

/// Setup material plus the prove/verify entry points.
#[derive(Debug)]
pub struct ProofSystem {
    material: ProvingKeyMaterial,
}

impl ProofSystem {
    pub fn new(material: ProvingKeyMaterial) -> Self {
        ProofSystem { material }
    }

    pub fn setup(backend: BackendTag, seed: Option<u64>) -> Result<Self, ProofError> {
        setup(backend, seed).map(ProofSystem::new)
    }

    pub fn reference() -> Self {
        ProofSystem::new(ProvingKeyMaterial::Reference { shape: CircuitShape::MERKLE32 })
    }

    pub fn backend(&self) -> BackendTag {
        self.material.backend()
    }

    pub fn material(&self) -> &ProvingKeyMaterial {
        &self.material
    }

    pub fn prove(&self, statement: &RollupStatement) -> Result<RollupProof, ProofError> {
        prove(&self.material, statement)
    }

    pub fn verify(&self, proof: &RollupProof) -> bool {
        verify(&self.material, proof)
    }

    /// Verifies the on-chain pair (root, proof bytes).
    pub fn verify_parts(&self, root: FieldElement, proof_bytes: &[u8]) -> bool {
        RollupProof::from_parts(root, proof_bytes.to_vec())
            .map(|p| self.verify(&p))
            .unwrap_or(false)
    }
}

impl BatchProver for ProofSystem {
    fn prove(&self, statement: &RollupStatement) -> Result<RollupProof, ProofError> {
        ProofSystem::prove(self, statement)
    }
}
