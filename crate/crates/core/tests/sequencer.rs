mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use common::*;
use sha2::{Digest, Sha256};
use zkrollup_core::ledger::batch_key;
use zkrollup_core::poseidon::poseidon2;
use zkrollup_core::sequencer::Stage;
use zkrollup_core::store::get_payload;
use zkrollup_core::tx::dummy_leaf;
use zkrollup_core::{BatchPayload, FieldElement, ProofSystem, SettlementStatus, Transaction};

/// Leaf rebuilt from the published encoding rules, without the library's
/// transaction code.
fn auditor_leaf(tx: &Transaction) -> FieldElement {
    let q = |s: &str| serde_json::to_string(s).unwrap();
    let json = format!(
        "{{\"assetId\":{},\"participant\":{},\"assetCid\":{},\"clientTimestamp\":{}}}",
        q(&tx.asset_id),
        q(&tx.participant),
        q(&tx.asset_cid),
        tx.client_timestamp
    );
    let digest: [u8; 32] = Sha256::digest(json.as_bytes()).into();
    FieldElement::from_be_bytes_mod_order(&digest)
}

fn auditor_root(payload: &BatchPayload) -> FieldElement {
    let mut level: Vec<FieldElement> = payload.transactions.iter().map(auditor_leaf).collect();
    // The padding leaf is a published constant.
    level.resize(32, dummy_leaf());
    while level.len() > 1 {
        level = level.chunks(2).map(|p| poseidon2(p[0], p[1])).collect();
    }
    level[0]
}

#[tokio::test]
async fn full_batch_commits_and_matches_ledger() {
    let rig = rig();
    let seq = &rig.sequencer;
    assert!(seq.get_batch(1).is_none());
    let ids: Vec<u64> = txs(1, 32).into_iter().map(|t| seq.submit(t).unwrap()).collect();
    let rec = seq.settle_once().await.unwrap();
    assert_eq!(rec.status, SettlementStatus::Committed);
    assert_eq!((rec.batch_number, rec.real_count), (1, 32));
    assert_eq!(rec.tracking_ids, ids);
    assert!(rec.proof_gen_ms.is_some() && rec.upload_ms.is_some() && rec.l1_commit_ms.is_some());

    let on_chain = seq.ledger().get_batch(1).unwrap();
    assert_eq!(Some(on_chain.merkle_root), rec.merkle_root);
    assert_eq!(Some(&on_chain.ipfs_cid), rec.cid.as_ref());
    assert_eq!(on_chain.tx_count, 32);
    assert!(seq.ledger().query(&batch_key(1)).is_some());
    let view = seq.get_batch(1).unwrap();
    assert_eq!(view.commitment.unwrap().merkle_root, view.record.unwrap().merkle_root.unwrap());
    assert!(seq.pool().is_empty());
    assert!(seq.settle_once().await.is_none());
}

#[tokio::test]
async fn auditor_recomputes_root_for_partial_and_full_batches() {
    let rig = rig();
    let seq = &rig.sequencer;
    let mut seed = 10;
    for (n, real) in [1usize, 5, 31, 32].into_iter().enumerate() {
        seed += 1;
        let batch = txs(seed, real);
        for t in &batch {
            seq.submit(t.clone()).unwrap();
        }
        let rec = seq.settle_once().await.unwrap();
        assert_eq!(rec.status, SettlementStatus::Committed);
        let on_chain = seq.ledger().get_batch(n as u64 + 1).unwrap();
        let payload = get_payload(rig.store.as_ref(), &on_chain.ipfs_cid).unwrap();
        assert!(payload.is_consistent());
        assert_eq!(payload.real_count, real);
        assert_eq!(payload.transactions, batch, "payload order is acceptance order");
        assert_eq!(auditor_root(&payload), on_chain.merkle_root, "realCount {real}");
    }
}

#[tokio::test]
async fn prover_failure_requeues_in_order_and_leaves_ledger_untouched() {
    let rig = rig_with(Arc::new(FlakyProver::failing(1)), None, 5);
    let seq = &rig.sequencer;
    let ids: Vec<u64> = txs(2, 7).into_iter().map(|t| seq.submit(t).unwrap()).collect();
    let rec = seq.settle_once().await.unwrap();
    assert_eq!(rec.status, SettlementStatus::Failed);
    assert_eq!(rec.failed_stage, Some(Stage::Prove));
    assert_eq!(seq.pool().pending_ids(), ids);
    assert_eq!(seq.ledger().block_count(), 0);
    assert_eq!(seq.ledger().last_batch_number(), 0);
    let view = seq.get_batch(1).unwrap();
    assert_eq!(view.record.unwrap().status, SettlementStatus::Failed);
    assert!(view.commitment.is_none());

    let retry = seq.settle_once().await.unwrap();
    assert_eq!((retry.status, retry.batch_number, retry.attempt), (SettlementStatus::Committed, 1, 2));
    assert_eq!(retry.tracking_ids, ids);
}

#[tokio::test]
async fn store_outage_fails_before_ledger() {
    let rig = rig_with(Arc::new(ProofSystem::reference()), Some(Arc::new(DownStore)), 5);
    let seq = &rig.sequencer;
    let ids: Vec<u64> = txs(3, 4).into_iter().map(|t| seq.submit(t).unwrap()).collect();
    let rec = seq.settle_once().await.unwrap();
    assert_eq!(rec.failed_stage, Some(Stage::Store));
    assert!(rec.proof_gen_ms.is_some());
    assert_eq!(seq.pool().pending_ids(), ids);
    assert_eq!(seq.ledger().block_count(), 0);
}

#[tokio::test]
async fn commit_timing_covers_ledger_latency() {
    let delay = Duration::from_millis(150);
    let rig = rig_over(Arc::new(ProofSystem::reference()), None, 5, |l| Arc::new(SlowLedger(l, delay)));
    let seq = &rig.sequencer;
    for t in txs(14, 3) {
        seq.submit(t).unwrap();
    }
    let rec = seq.settle_once().await.unwrap();
    assert_eq!(rec.status, SettlementStatus::Committed);
    assert!(rec.l1_commit_ms.unwrap() >= 150.0, "{rec:?}");
    assert!(rec.upload_ms.unwrap() < 150.0);
    assert_eq!(seq.ledger().last_batch_number(), 1);
}

#[tokio::test]
async fn ledger_refuses_corrupted_proofs() {
    let rig = rig_with(Arc::new(CorruptingProver(ProofSystem::reference())), None, 5);
    let seq = &rig.sequencer;
    let ids: Vec<u64> = txs(4, 32).into_iter().map(|t| seq.submit(t).unwrap()).collect();
    let rec = seq.settle_once().await.unwrap();
    assert_eq!(rec.failed_stage, Some(Stage::L1Commit));
    assert!(rec.error.unwrap().contains("proof"));
    assert_eq!(seq.pool().pending_ids(), ids);
    assert!(seq.ledger().get_batch(1).is_none());
    assert!(seq.ledger().query(&batch_key(1)).is_none());
    assert_eq!(seq.ledger().last_batch_number(), 0);
}

#[tokio::test]
async fn retry_budget_dead_letters_and_numbering_stays_gapless() {
    let rig = rig_with(Arc::new(FlakyProver::failing(3)), None, 2);
    let seq = &rig.sequencer;
    let first: Vec<u64> = txs(5, 32).into_iter().map(|t| seq.submit(t).unwrap()).collect();
    let second: Vec<u64> = txs(6, 3).into_iter().map(|t| seq.submit(t).unwrap()).collect();
    for attempt in 1..=3 {
        let rec = seq.settle_once().await.unwrap();
        assert_eq!((rec.status, rec.attempt), (SettlementStatus::Failed, attempt));
        assert_eq!(rec.dead_lettered, attempt == 3);
    }
    assert_eq!(seq.pool().dead_letter_ids(), first);
    let rec = seq.settle_once().await.unwrap();
    assert_eq!((rec.status, rec.batch_number), (SettlementStatus::Committed, 1));
    assert_eq!(rec.tracking_ids, second);
    let m = seq.metrics();
    assert_eq!((m.batches_failed, m.txs_dead_lettered, m.txs_settled), (3, 32, 3));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn ingestion_does_not_wait_for_a_slow_prover() {
    let prover = SlowProver(ProofSystem::reference(), Duration::from_millis(1500));
    let rig = rig_with(Arc::new(prover), None, 5);
    let seq = rig.sequencer.clone();
    for t in txs(7, 32) {
        seq.submit(t).unwrap();
    }
    let worker = {
        let seq = seq.clone();
        tokio::spawn(async move { seq.settle_once().await })
    };
    tokio::time::sleep(Duration::from_millis(100)).await;
    let mut worst = Duration::ZERO;
    for t in txs(8, 200) {
        let started = Instant::now();
        seq.submit(t).unwrap();
        worst = worst.max(started.elapsed());
    }
    assert!(!worker.is_finished(), "settlement should still be proving");
    assert!(worst < Duration::from_millis(50), "submit blocked for {worst:?}");
    let rec = worker.await.unwrap().unwrap();
    assert_eq!(rec.status, SettlementStatus::Committed);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn worker_loop_settles_full_and_partial_batches() {
    let rig = rig();
    let seq = rig.sequencer.clone();
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let worker = tokio::spawn(seq.clone().run(async move {
        let _ = stopped.await;
    }));
    let ids: Vec<u64> = txs(9, 70).into_iter().map(|t| seq.submit(t).unwrap()).collect();
    let deadline = Instant::now() + Duration::from_secs(10);
    while seq.metrics().txs_settled < 70 && Instant::now() < deadline {
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    stop.send(()).unwrap();
    worker.await.unwrap();
    let committed: Vec<u64> = seq
        .history()
        .into_iter()
        .filter(|r| r.status == SettlementStatus::Committed)
        .flat_map(|r| r.tracking_ids)
        .collect();
    assert_eq!(committed, ids);
    assert_eq!(seq.ledger().last_batch_number(), 3);
}

#[tokio::test]
async fn structured_log_has_one_line_per_attempt() {
    use std::io::Write;
    use std::sync::Mutex;

    #[derive(Clone, Default)]
    struct Sink(Arc<Mutex<Vec<u8>>>);
    impl Write for Sink {
        fn write(&mut self, b: &[u8]) -> std::io::Result<usize> {
            self.0.lock().unwrap().extend_from_slice(b);
            Ok(b.len())
        }
        fn flush(&mut self) -> std::io::Result<()> {
            Ok(())
        }
    }

    let verifier = Arc::new(ProofSystem::reference());
    let ledger = zkrollup_core::LiveLedger::start(zkrollup_core::LatencyModel::INSTANT, verifier).unwrap();
    let sink = Sink::default();
    let seq = zkrollup_core::Sequencer::new(
        Arc::new(zkrollup_core::TxPool::new(100, 32)),
        Arc::new(FlakyProver::failing(1)),
        Arc::new(zkrollup_core::MemoryStore::new()),
        Arc::new(ledger),
        Default::default(),
    )
    .with_log(Box::new(sink.clone()));
    for t in txs(10, 3) {
        seq.submit(t).unwrap();
    }
    seq.settle_once().await.unwrap();
    seq.settle_once().await.unwrap();
    let text = String::from_utf8(sink.0.lock().unwrap().clone()).unwrap();
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["status"], "failed");
    assert_eq!(lines[1]["status"], "committed");
    for key in ["proofGenMs", "uploadMs", "l1CommitMs"] {
        assert!(lines[1][key].as_f64().is_some(), "{key}");
    }
}

#[tokio::test]
async fn direct_submission_commits_and_rejects_duplicates() {
    let rig = rig();
    let tx = txs(11, 1).remove(0);
    let r = rig.sequencer.submit_direct(tx.clone()).await.unwrap();
    assert!(r.is_committed());
    let dup = rig.sequencer.submit_direct(tx).await.unwrap();
    assert!(!dup.is_committed());
    let bad = Transaction::new("", "p", "x", 0);
    assert!(rig.sequencer.submit_direct(bad.clone()).await.is_err());
    assert!(rig.sequencer.submit(bad).is_err());
    assert!(rig.sequencer.pool().is_empty());
}

#[tokio::test]
async fn drain_empties_the_pool() {
    let rig = rig();
    for t in txs(12, 100) {
        rig.sequencer.submit(t).unwrap();
    }
    assert!(rig.sequencer.drain(Duration::from_secs(10)).await);
    assert_eq!(rig.sequencer.ledger().last_batch_number(), 4);
    let _ = rig.verifier;
}
