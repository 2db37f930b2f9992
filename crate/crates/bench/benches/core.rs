use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, Criterion};
use zkrollup_bench::{statement, transactions};
use zkrollup_core::cid::cid_of;
use zkrollup_core::poseidon::poseidon2;
use zkrollup_core::proof::BackendTag;
use zkrollup_core::tx::{leaf_encode, padded_leaves};
use zkrollup_core::{FieldElement, MerkleTree32, ProofSystem};

fn hashing(c: &mut Criterion) {
    let (x, y) = (FieldElement::from_u64(1), FieldElement::from_u64(2));
    c.bench_function("poseidon2", |b| b.iter(|| poseidon2(black_box(x), black_box(y))));

    let txs = transactions(1, 32);
    c.bench_function("leaf_encode", |b| b.iter(|| leaf_encode(black_box(&txs[0])).unwrap()));

    let leaves = padded_leaves(&txs).unwrap();
    c.bench_function("merkle32_build", |b| b.iter(|| MerkleTree32::build(black_box(&leaves)).unwrap()));

    let payload = vec![0x5au8; 16 * 1024];
    c.bench_function("cid_of_16k", |b| b.iter(|| cid_of(black_box(&payload))));
}

fn proving(c: &mut Criterion) {
    let st = statement(2);
    let mut g = c.benchmark_group("proof");
    g.sample_size(10).measurement_time(Duration::from_secs(20));

    let reference = ProofSystem::reference();
    let proof = reference.prove(&st).unwrap();
    g.bench_function("reference_prove", |b| b.iter(|| reference.prove(black_box(&st)).unwrap()));
    g.bench_function("reference_verify", |b| b.iter(|| reference.verify(black_box(&proof))));

    let snark = ProofSystem::setup(BackendTag::Snark, Some(7)).unwrap();
    let proof = snark.prove(&st).unwrap();
    g.bench_function("snark_prove", |b| b.iter(|| snark.prove(black_box(&st)).unwrap()));
    g.bench_function("snark_verify", |b| b.iter(|| snark.verify(black_box(&proof))));
    g.finish();
}

criterion_group!(benches, hashing, proving);
criterion_main!(benches);
