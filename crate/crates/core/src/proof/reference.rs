//! Transparent backend: payload is the 32 leaves, 32 bytes each.

use super::{BackendTag, RollupStatement};
use crate::field::{FieldElement, FIELD_BYTES};
use crate::merkle::{MerkleTree32, LEAVES};

const PAYLOAD_LEN: usize = LEAVES * FIELD_BYTES;

pub(super) fn prove(statement: &RollupStatement) -> Vec<u8> {
    let mut out = Vec::with_capacity(1 + PAYLOAD_LEN);
    out.push(BackendTag::Reference.byte());
    for leaf in &statement.leaves {
        out.extend_from_slice(&leaf.to_be_bytes());
    }
    out
}

pub(super) fn verify(public_root: FieldElement, payload: &[u8]) -> bool {
    if payload.len() != PAYLOAD_LEN {
        return false;
    }
    let mut leaves = [FieldElement::ZERO; LEAVES];
    for (leaf, chunk) in leaves.iter_mut().zip(payload.chunks_exact(FIELD_BYTES)) {
        match FieldElement::from_be_bytes(chunk) {
            Ok(v) => *leaf = v,
            Err(_) => return false,
        }
    }
    MerkleTree32::build(&leaves).map(|t| t.root() == public_root).unwrap_or(false)
}
