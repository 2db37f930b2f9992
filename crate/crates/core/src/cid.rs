//! Content identifiers.
//!
//! Scheme: CIDv1 with the `raw` codec (0x55) over a sha2-256 multihash,
//! rendered in multibase base32 (RFC 4648 lowercase alphabet, no padding,
//! prefix `b`). Binary layout: `0x01 0x55 0x12 0x20 <32-byte digest>`.
//! These are the same identifiers an IPFS node assigns to a raw block, e.g.
//! the empty byte string is `bafkreihdwdcefgh4dqkjv67uzcmw7ojee6xedzdetojuzjevtenxquvyku`.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use data_encoding::{Encoding, Specification};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

const CID_VERSION: u8 = 0x01;
pub const CODEC_RAW: u8 = 0x55;
pub const CODEC_DAG_PB: u8 = 0x70;
const MH_SHA2_256: u8 = 0x12;
const MH_LEN: u8 = 0x20;
const MULTIBASE_BASE32: char = 'b';

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CidError {
    #[error("unsupported multibase prefix")]
    Multibase,
    #[error("invalid base32: {0}")]
    Base32(String),
    #[error("unsupported CID header")]
    Header,
    #[error("digest must be 32 bytes")]
    DigestLength,
}

fn base32_lower() -> &'static Encoding {
    static ENC: OnceLock<Encoding> = OnceLock::new();
    ENC.get_or_init(|| {
        let mut spec = Specification::new();
        spec.symbols.push_str("abcdefghijklmnopqrstuvwxyz234567");
        spec.encoding().expect("valid base32 specification")
    })
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cid {
    codec: u8,
    digest: [u8; 32],
}

impl Cid {
    pub fn digest(&self) -> &[u8; 32] {
        &self.digest
    }

    pub fn codec(&self) -> u8 {
        self.codec
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(36);
        out.extend_from_slice(&[CID_VERSION, self.codec, MH_SHA2_256, MH_LEN]);
        out.extend_from_slice(&self.digest);
        out
    }

    /// True when `bytes` hash to this identifier.
    pub fn matches(&self, bytes: &[u8]) -> bool {
        self.codec == CODEC_RAW && Sha256::digest(bytes).as_slice() == self.digest
    }
}

/// Identifier of a raw byte string.
pub fn cid_of(bytes: &[u8]) -> Cid {
    Cid { codec: CODEC_RAW, digest: Sha256::digest(bytes).into() }
}

impl fmt::Display for Cid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{MULTIBASE_BASE32}{}", base32_lower().encode(&self.to_bytes()))
    }
}

impl fmt::Debug for Cid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Cid({self})")
    }
}

impl FromStr for Cid {
    type Err = CidError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let body = s.strip_prefix(MULTIBASE_BASE32).ok_or(CidError::Multibase)?;
        let bytes = base32_lower()
            .decode(body.as_bytes())
            .map_err(|e| CidError::Base32(e.to_string()))?;
        if bytes.len() < 4 {
            return Err(CidError::Header);
        }
        let (header, digest) = bytes.split_at(4);
        let codec = header[1];
        if header[0] != CID_VERSION
            || !matches!(codec, CODEC_RAW | CODEC_DAG_PB)
            || header[2] != MH_SHA2_256
            || header[3] != MH_LEN
        {
            return Err(CidError::Header);
        }
        let digest: [u8; 32] = digest.try_into().map_err(|_| CidError::DigestLength)?;
        Ok(Cid { codec, digest })
    }
}

impl Serialize for Cid {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Cid {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Both computed with Python's hashlib + base64.b32encode.
    #[test]
    fn pinned_identifiers() {
        assert_eq!(
            cid_of(b"").to_string(),
            "bafkreihdwdcefgh4dqkjv67uzcmw7ojee6xedzdetojuzjevtenxquvyku"
        );
        assert_eq!(
            cid_of(b"hello asset").to_string(),
            "bafkreibnl3v5aokvsoogvj5na4uszrxbhe2nuubosjmbvrk7uiggtbwh7m"
        );
    }

    #[test]
    fn same_bytes_same_cid_and_bit_flip_differs() {
        let data = b"batch payload".to_vec();
        assert_eq!(cid_of(&data), cid_of(&data));
        let mut flipped = data.clone();
        flipped[3] ^= 0x01;
        assert_ne!(cid_of(&data), cid_of(&flipped));
    }

    #[test]
    fn rejects_malformed_text() {
        assert_eq!("Qmabc".parse::<Cid>(), Err(CidError::Multibase));
        assert!(matches!("b!!!".parse::<Cid>(), Err(CidError::Base32(_))));
        // Valid base32, but a CIDv0-style header.
        let bogus = format!("b{}", base32_lower().encode(&[0x12, 0x20, 0, 0]));
        assert_eq!(bogus.parse::<Cid>(), Err(CidError::Header));
        let short = format!("b{}", base32_lower().encode(&[1, 0x55, 0x12, 0x20, 1, 2]));
        assert_eq!(short.parse::<Cid>(), Err(CidError::DigestLength));
    }

    #[test]
    fn matches_checks_content() {
        let cid = cid_of(b"abc");
        assert!(cid.matches(b"abc"));
        assert!(!cid.matches(b"abd"));
    }

    proptest! {
        #[test]
        fn text_round_trip(data in proptest::collection::vec(any::<u8>(), 0..256)) {
            let cid = cid_of(&data);
            let text = cid.to_string();
            prop_assert!(text.starts_with("bafkrei"));
            prop_assert_eq!(text.parse::<Cid>().unwrap(), cid);
        }
    }
}
