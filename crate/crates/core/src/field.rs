//! Scalar field of the BN254 curve.
//!
//! Every hash, leaf, and Merkle node in the system is an element of this
//! field. The canonical byte form is the 32-byte big-endian encoding of the
//! reduced representative; it is what CIDs, proofs, and hex renderings are
//! computed from, so it must never change.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::str::FromStr;

use ff::{Field, FromUniformBytes, PrimeField};
use halo2curves_axiom::bn256::Fr;
use rand::RngCore;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// The field modulus, big-endian hex.
pub const MODULUS_HEX: &str = "30644e72e131a029b85045b68181585d2833e84879b9709143e1f593f0000001";

/// Length of the canonical byte encoding.
pub const FIELD_BYTES: usize = 32;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FieldError {
    #[error("encoding is not {FIELD_BYTES} bytes (got {0})")]
    Length(usize),
    #[error("value is not reduced modulo the field prime")]
    NonCanonical,
    #[error("invalid hex: {0}")]
    Hex(String),
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct FieldElement(Fr);

impl FieldElement {
    pub const ZERO: FieldElement = FieldElement(Fr::zero());
    pub const ONE: FieldElement = FieldElement(Fr::one());

    pub fn from_u64(v: u64) -> Self {
        FieldElement(Fr::from(v))
    }

    /// Parses the canonical big-endian encoding. Values `>= p` are rejected.
    pub fn from_be_bytes(bytes: &[u8]) -> Result<Self, FieldError> {
        if bytes.len() != FIELD_BYTES {
            return Err(FieldError::Length(bytes.len()));
        }
        let mut repr = [0u8; FIELD_BYTES];
        for (dst, src) in repr.iter_mut().zip(bytes.iter().rev()) {
            *dst = *src;
        }
        Option::from(Fr::from_repr(repr))
            .map(FieldElement)
            .ok_or(FieldError::NonCanonical)
    }

    /// Interprets 32 big-endian bytes as an integer and reduces it mod p.
    pub fn from_be_bytes_mod_order(bytes: &[u8; 32]) -> Self {
        let mut wide = [0u8; 64];
        for (dst, src) in wide.iter_mut().zip(bytes.iter().rev()) {
            *dst = *src;
        }
        FieldElement(Fr::from_uniform_bytes(&wide))
    }

    pub fn to_be_bytes(&self) -> [u8; FIELD_BYTES] {
        let mut out = self.0.to_repr();
        out.reverse();
        out
    }

    /// Lowercase hex of the canonical bytes, no prefix.
    pub fn to_hex(&self) -> String {
        hex::encode(self.to_be_bytes())
    }

    /// Accepts 64 hex digits with an optional `0x` prefix.
    pub fn from_hex(s: &str) -> Result<Self, FieldError> {
        let digits = s.strip_prefix("0x").unwrap_or(s);
        let bytes = hex::decode(digits).map_err(|e| FieldError::Hex(e.to_string()))?;
        Self::from_be_bytes(&bytes)
    }

    pub fn random(rng: &mut impl RngCore) -> Self {
        FieldElement(Fr::random(rng))
    }

    pub fn pow(&self, exp: u64) -> Self {
        FieldElement(self.0.pow_vartime([exp]))
    }

    /// x^5, the Poseidon s-box.
    #[inline]
    pub fn pow5(&self) -> Self {
        let sq = self.0.square();
        FieldElement(sq.square() * self.0)
    }

    pub fn inverse(&self) -> Option<Self> {
        Option::from(self.0.invert()).map(FieldElement)
    }

    pub fn is_zero(&self) -> bool {
        bool::from(self.0.is_zero())
    }

    pub(crate) fn into_inner(self) -> Fr {
        self.0
    }
}

impl Add for FieldElement {
    type Output = FieldElement;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        FieldElement(self.0 + rhs.0)
    }
}

impl Sub for FieldElement {
    type Output = FieldElement;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        FieldElement(self.0 - rhs.0)
    }
}

impl Mul for FieldElement {
    type Output = FieldElement;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        FieldElement(self.0 * rhs.0)
    }
}

impl Neg for FieldElement {
    type Output = FieldElement;
    fn neg(self) -> Self {
        FieldElement(-self.0)
    }
}

impl From<u64> for FieldElement {
    fn from(v: u64) -> Self {
        Self::from_u64(v)
    }
}

impl PartialOrd for FieldElement {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for FieldElement {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.to_be_bytes().cmp(&other.to_be_bytes())
    }
}

impl fmt::Display for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FieldElement(0x{})", self.to_hex())
    }
}

impl FromStr for FieldElement {
    type Err = FieldError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::from_hex(s)
    }
}

impl Serialize for FieldElement {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for FieldElement {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        FieldElement::from_hex(&s).map_err(serde::de::Error::custom)
    }
}
