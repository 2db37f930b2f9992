//! Matches accepted tracking ids against committed batch payloads.
//!
//! Walks every committed batch through the service (`/batch/{n}` for the
//! on-chain commitment, `/ipfs/{cid}` for the payload), rebuilds each
//! batch's Merkle root from the payload and counts where every accepted id
//! ended up.

use std::collections::{BTreeSet, HashMap};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use zkrollup_core::ledger::BatchCommitment;
use zkrollup_core::tx::padded_leaves;
use zkrollup_core::{BatchPayload, MerkleTree32};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Reconciliation {
    pub accepted: usize,
    pub batches_checked: u64,
    pub settled_once: usize,
    /// Accepted but neither committed nor still held by the sequencer.
    pub lost: Vec<u64>,
    /// Found in more than one committed batch.
    pub duplicated: Vec<u64>,
    /// Still pending or in flight.
    pub pending: Vec<u64>,
    /// Given up after exhausting retries; held for inspection.
    pub dead_lettered: Vec<u64>,
    /// Batches whose payload does not rebuild the on-chain root.
    pub root_mismatches: Vec<u64>,
}

impl Reconciliation {
    pub fn is_clean(&self) -> bool {
        self.lost.is_empty() && self.duplicated.is_empty() && self.root_mismatches.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.is_clean() && self.pending.is_empty() && self.dead_lettered.is_empty()
    }
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct Health {
    last_committed_batch: u64,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct BatchView {
    commitment: Option<BatchCommitment>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct PoolView {
    pending: Vec<u64>,
    in_flight: Vec<u64>,
    dead_letter: Vec<u64>,
}

async fn get_json<T: serde::de::DeserializeOwned>(client: &reqwest::Client, url: &str) -> anyhow::Result<T> {
    let resp = client.get(url).send().await.with_context(|| format!("GET {url}"))?;
    if !resp.status().is_success() {
        bail!("GET {url}: {}", resp.status());
    }
    Ok(resp.json().await.with_context(|| format!("decoding {url}"))?)
}

/// Pure matching step, separated from the HTTP walk.
pub fn reconcile_ids(
    accepted: &[u64],
    committed: &[(u64, Vec<u64>)],
    pending: &[u64],
    dead: &[u64],
) -> Reconciliation {
    let mut seen: HashMap<u64, usize> = HashMap::new();
    for (_, ids) in committed {
        for id in ids {
            *seen.entry(*id).or_insert(0) += 1;
        }
    }
    let pending_set: BTreeSet<u64> = pending.iter().copied().collect();
    let dead_set: BTreeSet<u64> = dead.iter().copied().collect();
    let mut r = Reconciliation {
        accepted: accepted.len(),
        batches_checked: committed.len() as u64,
        ..Reconciliation::default()
    };
    for id in accepted {
        match seen.get(id).copied().unwrap_or(0) {
            0 if pending_set.contains(id) => r.pending.push(*id),
            0 if dead_set.contains(id) => r.dead_lettered.push(*id),
            0 => r.lost.push(*id),
            1 => r.settled_once += 1,
            _ => r.duplicated.push(*id),
        }
    }
    // Duplicates among ids this report did not accept still break the invariant.
    let accepted_set: BTreeSet<u64> = accepted.iter().copied().collect();
    r.duplicated.extend(seen.iter().filter(|(id, n)| **n > 1 && !accepted_set.contains(id)).map(|(id, _)| *id));
    r.duplicated.sort_unstable();
    r
}

pub async fn reconcile(target: &str, accepted: &[u64]) -> anyhow::Result<Reconciliation> {
    let target = target.trim_end_matches('/');
    let client = reqwest::Client::new();
    let health: Health = get_json(&client, &format!("{target}/health")).await?;
    let mut committed = Vec::new();
    let mut mismatches = Vec::new();
    for n in 1..=health.last_committed_batch {
        let view: BatchView = get_json(&client, &format!("{target}/batch/{n}")).await?;
        let Some(c) = view.commitment else { bail!("batch {n} has no on-chain commitment") };
        let url = format!("{target}/ipfs/{}", c.ipfs_cid);
        let resp = client.get(&url).send().await.with_context(|| format!("GET {url}"))?;
        if !resp.status().is_success() {
            bail!("GET {url}: {}", resp.status());
        }
        let bytes = resp.bytes().await?;
        if !c.ipfs_cid.matches(&bytes) {
            bail!("payload for batch {n} does not match its CID");
        }
        let payload = BatchPayload::from_bytes(&bytes)?;
        let root = padded_leaves(&payload.transactions)
            .ok()
            .and_then(|l| MerkleTree32::build(&l).ok())
            .map(|t| t.root());
        if !payload.is_consistent() || root != Some(c.merkle_root) || payload.batch_number != n {
            mismatches.push(n);
        }
        committed.push((n, payload.tracking_ids));
    }
    let pool: PoolView = get_json(&client, &format!("{target}/pool")).await?;
    let in_pool: Vec<u64> = pool.pending.into_iter().chain(pool.in_flight).collect();
    let mut r = reconcile_ids(accepted, &committed, &in_pool, &pool.dead_letter);
    r.root_mismatches = mismatches;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_run() {
        let r = reconcile_ids(&[1, 2, 3], &[(1, vec![1, 2]), (2, vec![3])], &[], &[]);
        assert!(r.is_complete());
        assert_eq!(r.settled_once, 3);
    }

    #[test]
    fn unsettled_ids_are_pending_not_lost() {
        let r = reconcile_ids(&[1, 2, 3, 4], &[(1, vec![1])], &[2, 3], &[4]);
        assert!(r.is_clean());
        assert!(!r.is_complete());
        assert_eq!((r.pending, r.dead_lettered), (vec![2, 3], vec![4]));
    }

    #[test]
    fn losses_and_duplicates_are_listed() {
        let r = reconcile_ids(&[1, 2, 3], &[(1, vec![1, 2]), (2, vec![2, 9, 9])], &[], &[]);
        assert_eq!(r.lost, vec![3]);
        assert_eq!(r.duplicated, vec![2, 9]);
        assert!(!r.is_clean());
    }
}
