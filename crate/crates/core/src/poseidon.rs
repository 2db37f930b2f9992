//! Poseidon permutation (x^5 s-box, width 3) and the 2-to-1 compression
//! used for every Merkle node.
//!
//! Parameters are loaded from `data/poseidon_bn254_t3.txt`, a line-oriented
//! text file:
//!
//! ```text
//! # comments
//! modulus 0x<64 hex>
//! width 3
//! full_rounds 8
//! partial_rounds 57
//! alpha 5
//! round_constants <n>
//! 0x<64 hex>            (n lines, round-major: constant for round r, lane i at r*width+i)
//! mds 3
//! 0x.. 0x.. 0x..        (3 lines, row-major)
//! kat 0x<x> 0x<y> 0x<digest>
//! sha256 <hex digest of every byte before this line>
//! ```
//!
//! The file is checked on load: checksum, counts, modulus, MDS invertibility
//! and the known-answer vector. A file that fails any check is rejected.

use std::sync::OnceLock;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::field::{FieldElement, MODULUS_HEX};

pub const WIDTH: usize = 3;

const EMBEDDED_PARAMS: &str = include_str!("../data/poseidon_bn254_t3.txt");

#[derive(Debug, Error)]
pub enum ParamsError {
    #[error("checksum line missing")]
    MissingChecksum,
    #[error("checksum mismatch: file says {expected}, content hashes to {actual}")]
    Checksum { expected: String, actual: String },
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("field modulus {0} is not the BN254 scalar field")]
    Modulus(String),
    #[error("unsupported parameter: {0}")]
    Unsupported(String),
    #[error("expected {expected} round constants, found {found}")]
    ConstantCount { expected: usize, found: usize },
    #[error("MDS matrix is singular")]
    SingularMds,
    #[error("known-answer vector does not reproduce")]
    KnownAnswer,
}

#[derive(Clone, Debug)]
pub struct PoseidonParams {
    pub full_rounds: usize,
    pub partial_rounds: usize,
    pub round_constants: Vec<FieldElement>,
    pub mds: [[FieldElement; WIDTH]; WIDTH],
    pub known_answer: (FieldElement, FieldElement, FieldElement),
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self) -> Result<(usize, &'a str), ParamsError> {
        for (idx, line) in self.inner.by_ref() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            return Ok((idx + 1, trimmed));
        }
        Err(ParamsError::Malformed { line: 0, msg: "unexpected end of file".into() })
    }

    fn keyed(&mut self, key: &str) -> Result<(usize, &'a str), ParamsError> {
        let (line, text) = self.next_line()?;
        match text.split_once(' ') {
            Some((k, v)) if k == key => Ok((line, v.trim())),
            _ => Err(ParamsError::Malformed { line, msg: format!("expected `{key}`") }),
        }
    }

    fn keyed_usize(&mut self, key: &str) -> Result<usize, ParamsError> {
        let (line, v) = self.keyed(key)?;
        v.parse().map_err(|_| ParamsError::Malformed { line, msg: format!("bad integer `{v}`") })
    }
}

fn element(line: usize, s: &str) -> Result<FieldElement, ParamsError> {
    FieldElement::from_hex(s).map_err(|e| ParamsError::Malformed { line, msg: e.to_string() })
}

impl PoseidonParams {
    /// Parses and fully validates a parameter file.
    pub fn parse(text: &str) -> Result<Self, ParamsError> {
        let marker = text.rfind("\nsha256 ").ok_or(ParamsError::MissingChecksum)?;
        let (body, trailer) = text.split_at(marker + 1);
        let expected = trailer["sha256 ".len()..].trim().to_string();
        let actual = hex::encode(Sha256::digest(body.as_bytes()));
        if expected != actual {
            return Err(ParamsError::Checksum { expected, actual });
        }

        let mut lines = Lines { inner: body.lines().enumerate() };
        let (_, modulus) = lines.keyed("modulus")?;
        if modulus.trim_start_matches("0x") != MODULUS_HEX {
            return Err(ParamsError::Modulus(modulus.to_string()));
        }
        let width = lines.keyed_usize("width")?;
        if width != WIDTH {
            return Err(ParamsError::Unsupported(format!("width {width}")));
        }
        let full_rounds = lines.keyed_usize("full_rounds")?;
        if full_rounds == 0 || full_rounds % 2 != 0 {
            return Err(ParamsError::Unsupported(format!("full_rounds {full_rounds}")));
        }
        let partial_rounds = lines.keyed_usize("partial_rounds")?;
        let alpha = lines.keyed_usize("alpha")?;
        if alpha != 5 {
            return Err(ParamsError::Unsupported(format!("alpha {alpha}")));
        }

        let count = lines.keyed_usize("round_constants")?;
        let expected = WIDTH * (full_rounds + partial_rounds);
        if count != expected {
            return Err(ParamsError::ConstantCount { expected, found: count });
        }
        let mut round_constants = Vec::with_capacity(count);
        for _ in 0..count {
            let (line, text) = lines.next_line()?;
            round_constants.push(element(line, text)?);
        }

        let rows = lines.keyed_usize("mds")?;
        if rows != WIDTH {
            return Err(ParamsError::Unsupported(format!("mds size {rows}")));
        }
        let mut mds = [[FieldElement::ZERO; WIDTH]; WIDTH];
        for row in mds.iter_mut() {
            let (line, text) = lines.next_line()?;
            let cells: Vec<&str> = text.split_whitespace().collect();
            if cells.len() != WIDTH {
                return Err(ParamsError::Malformed { line, msg: "mds row width".into() });
            }
            for (cell, s) in row.iter_mut().zip(cells) {
                *cell = element(line, s)?;
            }
        }

        let (line, kat) = lines.keyed("kat")?;
        let parts: Vec<&str> = kat.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(ParamsError::Malformed { line, msg: "kat needs x, y, digest".into() });
        }
        let known_answer =
            (element(line, parts[0])?, element(line, parts[1])?, element(line, parts[2])?);

        let params = PoseidonParams { full_rounds, partial_rounds, round_constants, mds, known_answer };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), ParamsError> {
        let expected = WIDTH * (self.full_rounds + self.partial_rounds);
        if self.round_constants.len() != expected {
            return Err(ParamsError::ConstantCount { expected, found: self.round_constants.len() });
        }
        if determinant(&self.mds).is_zero() {
            return Err(ParamsError::SingularMds);
        }
        let (x, y, digest) = self.known_answer;
        if self.hash2(x, y) != digest {
            return Err(ParamsError::KnownAnswer);
        }
        Ok(())
    }

    pub fn total_rounds(&self) -> usize {
        self.full_rounds + self.partial_rounds
    }

    pub fn permute(&self, state: &mut [FieldElement; WIDTH]) {
        let half = self.full_rounds / 2;
        for round in 0..self.total_rounds() {
            let rc = &self.round_constants[round * WIDTH..(round + 1) * WIDTH];
            for (s, c) in state.iter_mut().zip(rc) {
                *s = *s + *c;
            }
            if round < half || round >= half + self.partial_rounds {
                for s in state.iter_mut() {
                    *s = s.pow5();
                }
            } else {
                state[0] = state[0].pow5();
            }
            *state = mds_mul(&self.mds, state);
        }
    }

    /// Compression: state `[0, x, y]`, permute, output lane 0.
    pub fn hash2(&self, x: FieldElement, y: FieldElement) -> FieldElement {
        let mut state = [FieldElement::ZERO, x, y];
        self.permute(&mut state);
        state[0]
    }
}

#[inline]
fn mds_mul(
    mds: &[[FieldElement; WIDTH]; WIDTH],
    state: &[FieldElement; WIDTH],
) -> [FieldElement; WIDTH] {
    let mut out = [FieldElement::ZERO; WIDTH];
    for (o, row) in out.iter_mut().zip(mds) {
        *o = row[0] * state[0] + row[1] * state[1] + row[2] * state[2];
    }
    out
}

fn determinant(m: &[[FieldElement; WIDTH]; WIDTH]) -> FieldElement {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// The embedded parameter set, validated on first use.
pub fn params() -> &'static PoseidonParams {
    static PARAMS: OnceLock<PoseidonParams> = OnceLock::new();
    PARAMS.get_or_init(|| {
        PoseidonParams::parse(EMBEDDED_PARAMS)
            .unwrap_or_else(|e| panic!("embedded Poseidon parameters are corrupt: {e}"))
    })
}

/// `HashLeftRight(x, y)`.
pub fn poseidon2(x: FieldElement, y: FieldElement) -> FieldElement {
    params().hash2(x, y)
}

/// A 2-to-1 compression function. Tree construction is generic over this so
/// that tests can count invocations.
pub trait Compress {
    fn compress(&self, left: FieldElement, right: FieldElement) -> FieldElement;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Poseidon;

impl Compress for Poseidon {
    #[inline]
    fn compress(&self, left: FieldElement, right: FieldElement) -> FieldElement {
        poseidon2(left, right)
    }
}
