//! PLONK (KZG over BN254) backend for the 32-leaf Poseidon Merkle circuit.
//!
//! Layout: one block of 66 rows per compression. Row 0 holds the initial
//! sponge state `[0, left, right]`, row `r + 1` the state after round `r`.
//! Advice columns hold the state and the squared S-box inputs; fixed columns
//! hold round constants. Gates stay at degree 5 including the selector.
//! Child outputs are copy-constrained into parent inputs, and the
//! final output is constrained to the single public instance (the root).

use std::cell::RefCell;
use std::io::{self, Cursor, Read};
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use halo2_axiom::circuit::{Cell, Layouter, Region, SimpleFloorPlanner, Value};
use halo2_axiom::plonk::{
    create_proof, keygen_pk, keygen_vk, verify_proof, Advice, Circuit, Column, ConstraintSystem,
    Error, Expression, Fixed, Instance, ProvingKey, Selector,
};
use halo2_axiom::poly::commitment::Params;
use halo2_axiom::poly::kzg::commitment::{KZGCommitmentScheme, ParamsKZG};
use halo2_axiom::poly::kzg::multiopen::{ProverSHPLONK, VerifierSHPLONK};
use halo2_axiom::poly::kzg::strategy::SingleStrategy;
use halo2_axiom::poly::Rotation;
use halo2_axiom::transcript::{
    Blake2bRead, Blake2bWrite, Challenge255, Transcript, TranscriptRead, TranscriptReadBuffer,
    TranscriptWriterBuffer,
};
use halo2_axiom::SerdeFormat;
use halo2curves_axiom::bn256::{Bn256, Fr, G1Affine};
use halo2curves_axiom::group::GroupEncoding;
use rand::rngs::OsRng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::{BackendTag, CircuitShape, ProofError, RollupStatement};
use crate::field::FieldElement;
use crate::merkle::{DEPTH, LEAVES};
use crate::poseidon::{params, PoseidonParams, WIDTH};

/// 31 regions of 66 rows need 2046 usable rows, so 2^12.
pub const CIRCUIT_K: u32 = 12;

#[derive(Clone, Debug)]
pub struct MerkleConfig {
    state: [Column<Advice>; WIDTH],
    /// `(state + rc)^2`, kept in the witness so every gate stays at degree 4.
    square: [Column<Advice>; WIDTH],
    rc: [Column<Fixed>; WIDTH],
    q_init: Selector,
    q_full: Selector,
    q_partial: Selector,
    instance: Column<Instance>,
}

/// Witness leaves (unknown during key generation) and a synthesis counter.
#[derive(Clone, Default)]
pub struct MerkleCircuit {
    leaves: Option<[Fr; LEAVES]>,
    compressions: Arc<AtomicUsize>,
}

impl MerkleCircuit {
    pub fn new(leaves: &[FieldElement; LEAVES]) -> Self {
        MerkleCircuit {
            leaves: Some(leaves.map(FieldElement::into_inner)),
            compressions: Arc::default(),
        }
    }

    /// Compression regions laid out by the most recent synthesis.
    pub fn compressions_laid_out(&self) -> usize {
        self.compressions.load(Ordering::SeqCst)
    }
}

fn fr(x: FieldElement) -> Fr {
    x.into_inner()
}

fn constant(x: FieldElement) -> Expression<Fr> {
    Expression::Constant(fr(x))
}

/// Per-lane `x = s + rc`, `x^2 = square` and `x^5 = square^2 * x` on the current row.
struct LaneExprs {
    x: Expression<Fr>,
    square_check: Expression<Fr>,
    pow5: Expression<Fr>,
}

fn lane(
    meta: &mut halo2_axiom::plonk::VirtualCells<'_, Fr>,
    config: (&[Column<Advice>; WIDTH], &[Column<Advice>; WIDTH], &[Column<Fixed>; WIDTH]),
    i: usize,
) -> LaneExprs {
    let (state, square, rc) = config;
    let x = meta.query_advice(state[i], Rotation::cur()) + meta.query_fixed(rc[i], Rotation::cur());
    let sq = meta.query_advice(square[i], Rotation::cur());
    LaneExprs {
        square_check: sq.clone() - x.clone() * x.clone(),
        pow5: sq.clone() * sq * x.clone(),
        x,
    }
}

impl Circuit<Fr> for MerkleCircuit {
    type Config = MerkleConfig;
    type FloorPlanner = SimpleFloorPlanner;
    type Params = ();

    fn without_witnesses(&self) -> Self {
        MerkleCircuit { leaves: None, compressions: self.compressions.clone() }
    }

    fn configure(meta: &mut ConstraintSystem<Fr>) -> MerkleConfig {
        let state = [(); WIDTH].map(|_| meta.advice_column());
        let square = [(); WIDTH].map(|_| meta.advice_column());
        let rc = [(); WIDTH].map(|_| meta.fixed_column());
        let instance = meta.instance_column();
        for col in state {
            meta.enable_equality(col);
        }
        meta.enable_equality(instance);
        let q_init = meta.complex_selector();
        let q_full = meta.complex_selector();
        let q_partial = meta.complex_selector();
        let mds = params().mds;

        meta.create_gate("capacity starts at zero", |meta| {
            let q = meta.query_selector(q_init);
            let s0 = meta.query_advice(state[0], Rotation::cur());
            vec![q * s0]
        });

        meta.create_gate("full round", |meta| {
            let q = meta.query_selector(q_full);
            let lanes: Vec<LaneExprs> =
                (0..WIDTH).map(|i| lane(meta, (&state, &square, &rc), i)).collect();
            let mut constraints: Vec<Expression<Fr>> =
                lanes.iter().map(|l| q.clone() * l.square_check.clone()).collect();
            for (i, row) in mds.iter().enumerate() {
                let next = meta.query_advice(state[i], Rotation::next());
                let mixed = (0..WIDTH)
                    .map(|j| constant(row[j]) * lanes[j].pow5.clone())
                    .reduce(|a, b| a + b)
                    .unwrap();
                constraints.push(q.clone() * (next - mixed));
            }
            constraints
        });

        meta.create_gate("partial round", |meta| {
            let q = meta.query_selector(q_partial);
            let lanes: Vec<LaneExprs> =
                (0..WIDTH).map(|i| lane(meta, (&state, &square, &rc), i)).collect();
            let mut constraints = vec![q.clone() * lanes[0].square_check.clone()];
            for (i, row) in mds.iter().enumerate() {
                let next = meta.query_advice(state[i], Rotation::next());
                let mixed = constant(row[0]) * lanes[0].pow5.clone()
                    + constant(row[1]) * lanes[1].x.clone()
                    + constant(row[2]) * lanes[2].x.clone();
                constraints.push(q.clone() * (next - mixed));
            }
            constraints
        });

        MerkleConfig { state, square, rc, q_init, q_full, q_partial, instance }
    }

    fn synthesize(&self, config: MerkleConfig, mut layouter: impl Layouter<Fr>) -> Result<(), Error> {
        let p = params();
        let leaves: Vec<Value<Fr>> = match &self.leaves {
            Some(l) => l.iter().map(|v| Value::known(*v)).collect(),
            None => vec![Value::unknown(); LEAVES],
        };

        // The single-pass layouter places every region at row 0, so the whole
        // tree lives in one region and each compression takes its own block.
        let root_cell = layouter.assign_region(
            || "merkle tree",
            |mut region| {
                let mut count = 0usize;
                // (value, cell) of the current level; leaves have no cell yet.
                let mut level: Vec<(Value<Fr>, Option<Cell>)> =
                    leaves.iter().map(|v| (*v, None)).collect();
                for _ in 0..DEPTH {
                    let mut next = Vec::with_capacity(level.len() / 2);
                    for pair in level.chunks(2) {
                        let base = count * ROWS_PER_HASH;
                        next.push(compression(&config, p, &mut region, base, pair[0], pair[1])?);
                        count += 1;
                    }
                    level = next;
                }
                self.compressions.store(count, Ordering::SeqCst);
                Ok(level[0].1.expect("root cell is assigned"))
            },
        )?;
        layouter.constrain_instance(root_cell, config.instance, 0);
        Ok(())
    }
}

/// Initial state row plus one row per round.
const ROWS_PER_HASH: usize = 66;

fn compression(
    config: &MerkleConfig,
    p: &PoseidonParams,
    region: &mut Region<'_, Fr>,
    base: usize,
    left: (Value<Fr>, Option<Cell>),
    right: (Value<Fr>, Option<Cell>),
) -> Result<(Value<Fr>, Option<Cell>), Error> {
    let mut state = [Value::known(Fr::zero()), left.0, right.0];
    config.q_init.enable(region, base)?;
    let row0: Vec<Cell> = state
        .iter()
        .zip(config.state)
        .map(|(v, col)| region.assign_advice(col, base, *v).cell())
        .collect();
    if let Some(cell) = left.1 {
        region.constrain_equal(cell, row0[1]);
    }
    if let Some(cell) = right.1 {
        region.constrain_equal(cell, row0[2]);
    }

    let half = p.full_rounds / 2;
    let mds = p.mds.map(|row| row.map(fr));
    let mut out_cell = row0[0];
    for round in 0..p.total_rounds() {
        let row = base + round;
        let full = round < half || round >= half + p.partial_rounds;
        if full {
            config.q_full.enable(region, row)?;
        } else {
            config.q_partial.enable(region, row)?;
        }
        let rc: [Fr; WIDTH] = std::array::from_fn(|i| fr(p.round_constants[round * WIDTH + i]));
        for (col, c) in config.rc.iter().zip(rc) {
            region.assign_fixed(*col, row, c);
        }

        let shifted: [Value<Fr>; WIDTH] = std::array::from_fn(|i| state[i].map(|s| s + rc[i]));
        let squares: [Value<Fr>; WIDTH] = std::array::from_fn(|i| shifted[i].map(|x| x.square()));
        for (col, v) in config.square.iter().zip(squares) {
            region.assign_advice(*col, row, v);
        }
        let after_sbox: [Value<Fr>; WIDTH] = std::array::from_fn(|i| {
            if full || i == 0 {
                shifted[i].zip(squares[i]).map(|(x, sq)| sq.square() * x)
            } else {
                shifted[i]
            }
        });
        state = std::array::from_fn(|i| {
            after_sbox[0]
                .zip(after_sbox[1])
                .zip(after_sbox[2])
                .map(|((a, b), c)| mds[i][0] * a + mds[i][1] * b + mds[i][2] * c)
        });
        for (i, col) in config.state.iter().enumerate() {
            let cell = region.assign_advice(*col, row + 1, state[i]).cell();
            if i == 0 {
                out_cell = cell;
            }
        }
    }
    Ok((state[0], Some(out_cell)))
}

pub struct SnarkMaterial {
    params: ParamsKZG<Bn256>,
    pk: ProvingKey<G1Affine>,
    shape: CircuitShape,
}

pub(super) fn setup(seed: Option<u64>) -> Result<SnarkMaterial, ProofError> {
    let params = match seed {
        Some(s) => ParamsKZG::<Bn256>::setup(CIRCUIT_K, ChaCha20Rng::seed_from_u64(s)),
        None => ParamsKZG::<Bn256>::setup(CIRCUIT_K, OsRng),
    };
    let blank = MerkleCircuit::default();
    let vk = keygen_vk(&params, &blank).map_err(|e| ProofError::Backend(e.to_string()))?;
    let compression_gates = blank.compressions_laid_out();
    let pk = keygen_pk(&params, vk, &blank).map_err(|e| ProofError::Backend(e.to_string()))?;
    let shape = CircuitShape { leaves: LEAVES, depth: DEPTH, compression_gates };
    Ok(SnarkMaterial { params, pk, shape })
}

impl SnarkMaterial {
    pub fn shape(&self) -> CircuitShape {
        self.shape
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.params.write(&mut out).expect("writing to a Vec cannot fail");
        self.pk.write(&mut out, SerdeFormat::RawBytes).expect("writing to a Vec cannot fail");
        out
    }

    pub(super) fn prove(&self, statement: &RollupStatement) -> Result<Vec<u8>, ProofError> {
        let circuit = MerkleCircuit::new(&statement.leaves);
        let root = [fr(statement.public_root)];
        let instances: &[&[Fr]] = &[&root];
        let mut transcript = Blake2bWrite::<_, G1Affine, Challenge255<_>>::init(vec![]);
        create_proof::<KZGCommitmentScheme<Bn256>, ProverSHPLONK<'_, Bn256>, _, _, _, _>(
            &self.params,
            &self.pk,
            &[circuit],
            &[instances],
            OsRng,
            &mut transcript,
        )
        .map_err(|e| ProofError::Backend(e.to_string()))?;
        let mut out = vec![BackendTag::Snark.byte()];
        out.extend(transcript.finalize());
        Ok(out)
    }

    pub(super) fn verify(&self, public_root: FieldElement, payload: &[u8]) -> bool {
        let root = [fr(public_root)];
        let instances: &[&[Fr]] = &[&root];
        let mut cursor = Cursor::new(payload);
        let ok = {
            let mut transcript = CanonicalRead::new(&mut cursor);
            verify_proof::<
                KZGCommitmentScheme<Bn256>,
                VerifierSHPLONK<'_, Bn256>,
                Challenge255<G1Affine>,
                CanonicalRead<&mut Cursor<&[u8]>>,
                SingleStrategy<'_, Bn256>,
            >(
                &self.params,
                self.pk.get_vk(),
                SingleStrategy::new(&self.params),
                &[instances],
                &mut transcript,
            )
            .is_ok()
        };
        // Trailing bytes would make the encoding malleable.
        ok && cursor.position() as usize == payload.len()
    }
}

/// Copies every byte it reads into a shared buffer.
struct Tap<R> {
    inner: R,
    seen: Rc<RefCell<Vec<u8>>>,
}

impl<R: Read> Read for Tap<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.seen.borrow_mut().extend_from_slice(&buf[..n]);
        Ok(n)
    }
}

/// Blake2b transcript reader that also requires every point to be in its
/// canonical compressed form. The stock decoder ignores the spare top bit of
/// a compressed point, so without this check flipping that bit yields a
/// second valid proof.
struct CanonicalRead<R: Read> {
    inner: Blake2bRead<Tap<R>, G1Affine, Challenge255<G1Affine>>,
    seen: Rc<RefCell<Vec<u8>>>,
}

impl<R: Read> CanonicalRead<R> {
    fn new(reader: R) -> Self {
        let seen = Rc::new(RefCell::new(Vec::new()));
        let inner = Blake2bRead::init(Tap { inner: reader, seen: seen.clone() });
        CanonicalRead { inner, seen }
    }
}

impl<R: Read> Transcript<G1Affine, Challenge255<G1Affine>> for CanonicalRead<R> {
    fn squeeze_challenge(&mut self) -> Challenge255<G1Affine> {
        self.inner.squeeze_challenge()
    }

    fn common_point(&mut self, point: G1Affine) -> io::Result<()> {
        self.inner.common_point(point)
    }

    fn common_scalar(&mut self, scalar: Fr) -> io::Result<()> {
        self.inner.common_scalar(scalar)
    }
}

impl<R: Read> TranscriptRead<G1Affine, Challenge255<G1Affine>> for CanonicalRead<R> {
    fn read_point(&mut self) -> io::Result<G1Affine> {
        self.seen.borrow_mut().clear();
        let point = self.inner.read_point()?;
        if point.to_bytes().as_ref() != self.seen.borrow().as_slice() {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "non-canonical point encoding"));
        }
        Ok(point)
    }

    fn read_scalar(&mut self) -> io::Result<Fr> {
        // `from_repr` already rejects non-canonical scalars.
        self.inner.read_scalar()
    }
}
