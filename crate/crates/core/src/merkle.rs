//! Fixed-shape Merkle tree over exactly 32 leaves (depth 5).
//!
//! Level `k+1` node `i` is `compress(level_k[2i], level_k[2i+1])`; the root is
//! the single node of level 5. Construction always performs 31 compressions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::FieldElement;
use crate::poseidon::{Compress, Poseidon};

pub const LEAVES: usize = 32;
pub const DEPTH: usize = 5;
/// Compressions per tree: 16 + 8 + 4 + 2 + 1.
pub const COMPRESSIONS: usize = LEAVES - 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MerkleError {
    #[error("a tree needs exactly {LEAVES} leaves, got {0}")]
    LeafCount(usize),
    #[error("leaf index {0} out of range")]
    IndexOutOfRange(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MerkleTree32 {
    leaves: [FieldElement; 32],
    level1: [FieldElement; 16],
    level2: [FieldElement; 8],
    level3: [FieldElement; 4],
    level4: [FieldElement; 2],
    root: FieldElement,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// The running node is the left input; the sibling is on the right.
    Left,
    Right,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MerklePath {
    pub index: usize,
    pub siblings: [FieldElement; DEPTH],
    pub directions: [Side; DEPTH],
}

fn fold<const N: usize, const M: usize>(
    hasher: &impl Compress,
    below: &[FieldElement; N],
) -> [FieldElement; M] {
    debug_assert_eq!(N, 2 * M);
    std::array::from_fn(|i| hasher.compress(below[2 * i], below[2 * i + 1]))
}

impl MerkleTree32 {
    pub fn build(leaves: &[FieldElement]) -> Result<Self, MerkleError> {
        Self::build_with(&Poseidon, leaves)
    }

    pub fn build_with(hasher: &impl Compress, leaves: &[FieldElement]) -> Result<Self, MerkleError> {
        let leaves: [FieldElement; 32] =
            leaves.try_into().map_err(|_| MerkleError::LeafCount(leaves.len()))?;
        let level1: [FieldElement; 16] = fold(hasher, &leaves);
        let level2: [FieldElement; 8] = fold(hasher, &level1);
        let level3: [FieldElement; 4] = fold(hasher, &level2);
        let level4: [FieldElement; 2] = fold(hasher, &level3);
        let root = hasher.compress(level4[0], level4[1]);
        Ok(MerkleTree32 { leaves, level1, level2, level3, level4, root })
    }

    pub fn root(&self) -> FieldElement {
        self.root
    }

    pub fn leaves(&self) -> &[FieldElement; 32] {
        &self.leaves
    }

    /// Level 0 is the leaves, level 5 the root.
    pub fn level(&self, level: usize) -> &[FieldElement] {
        match level {
            0 => &self.leaves,
            1 => &self.level1,
            2 => &self.level2,
            3 => &self.level3,
            4 => &self.level4,
            5 => std::slice::from_ref(&self.root),
            _ => &[],
        }
    }

    pub fn prove_membership(&self, index: usize) -> Result<MerklePath, MerkleError> {
        if index >= LEAVES {
            return Err(MerkleError::IndexOutOfRange(index));
        }
        let mut siblings = [FieldElement::ZERO; DEPTH];
        let mut directions = [Side::Left; DEPTH];
        let mut pos = index;
        for depth in 0..DEPTH {
            let nodes = self.level(depth);
            siblings[depth] = nodes[pos ^ 1];
            directions[depth] = if pos % 2 == 0 { Side::Left } else { Side::Right };
            pos /= 2;
        }
        Ok(MerklePath { index, siblings, directions })
    }
}

/// Folds `leaf` up through `path` and compares with `root`.
pub fn verify_membership(root: FieldElement, leaf: FieldElement, path: &MerklePath) -> bool {
    if path.index >= LEAVES {
        return false;
    }
    let mut node = leaf;
    for (depth, (sibling, side)) in path.siblings.iter().zip(path.directions).enumerate() {
        // Directions must agree with the index bits.
        let expected = if (path.index >> depth) & 1 == 0 { Side::Left } else { Side::Right };
        if side != expected {
            return false;
        }
        node = match side {
            Side::Left => Poseidon.compress(node, *sibling),
            Side::Right => Poseidon.compress(*sibling, node),
        };
    }
    node == root
}
