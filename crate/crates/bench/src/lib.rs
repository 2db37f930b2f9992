//! Fixtures shared by the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use zkrollup_core::proof::RollupStatement;
use zkrollup_core::tx::{padded_leaves, random_transaction};
use zkrollup_core::Transaction;

pub fn transactions(seed: u64, n: usize) -> Vec<Transaction> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..n).map(|i| random_transaction(&mut rng, 1_735_689_600_000 + i as u64)).collect()
}

/// A full 32-leaf statement built from seeded transactions.
pub fn statement(seed: u64) -> RollupStatement {
    let leaves = padded_leaves(&transactions(seed, 32)).expect("fixture transactions are valid");
    RollupStatement::from_leaves(leaves)
}
