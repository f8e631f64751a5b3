//! Hashing, address derivation, EIP-712 / EIP-3009 digests and secp256k1
//! signatures.
//!
//! Everything in here is a pure function over values. Text encodings are
//! `0x`-prefixed lowercase hex; parsing accepts either case.

use std::fmt;
use std::str::FromStr;

use k256::ecdsa::{RecoveryId, Signature as EcdsaSignature, SigningKey, VerifyingKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha3::{Digest as _, Keccak256};

use crate::ledger::TransferAuthorization;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CryptoError {
    #[error("invalid key")]
    InvalidKey,
    #[error("invalid signature")]
    InvalidSignature,
    #[error("invalid hex: {0}")]
    InvalidHex(String),
    #[error("expected {expected} bytes, got {actual}")]
    InvalidLength { expected: usize, actual: usize },
}

fn decode_hex_fixed<const N: usize>(s: &str) -> Result<[u8; N], CryptoError> {
    let body = s
        .strip_prefix("0x")
        .or_else(|| s.strip_prefix("0X"))
        .ok_or_else(|| CryptoError::InvalidHex(format!("missing 0x prefix: {s:?}")))?;
    let bytes = hex::decode(body).map_err(|e| CryptoError::InvalidHex(e.to_string()))?;
    bytes
        .as_slice()
        .try_into()
        .map_err(|_| CryptoError::InvalidLength {
            expected: N,
            actual: bytes.len(),
        })
}

macro_rules! hex_text_serde {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

/// A 32-byte hash value.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest32(pub [u8; 32]);

impl Digest32 {
    pub const ZERO: Digest32 = Digest32([0u8; 32]);

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl fmt::Display for Digest32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", hex::encode(self.0))
    }
}

impl fmt::Debug for Digest32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Digest32 {
    type Err = CryptoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        decode_hex_fixed(s).map(Digest32)
    }
}

hex_text_serde!(Digest32);

/// A 20-byte account or contract address.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Address(pub [u8; 20]);

impl Address {
    pub const ZERO: Address = Address([0u8; 20]);

    pub fn as_bytes(&self) -> &[u8; 20] {
        &self.0
    }

    /// Left-pads the address to a 32-byte ABI word.
    pub fn to_word(&self) -> [u8; 32] {
        let mut out = [0u8; 32];
        out[12..].copy_from_slice(&self.0);
        out
    }

    /// Address whose last byte is `n`; handy for fixtures.
    pub fn from_low_u64(n: u64) -> Address {
        let mut out = [0u8; 20];
        out[12..].copy_from_slice(&n.to_be_bytes());
        Address(out)
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", hex::encode(self.0))
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Address {
    type Err = CryptoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        decode_hex_fixed(s).map(Address)
    }
}

hex_text_serde!(Address);

/// Recoverable ECDSA signature with Ethereum-style `v` in {27, 28}.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature {
    pub r: [u8; 32],
    pub s: [u8; 32],
    pub v: u8,
}

impl Signature {
    pub fn to_bytes(&self) -> [u8; 65] {
        let mut out = [0u8; 65];
        out[..32].copy_from_slice(&self.r);
        out[32..64].copy_from_slice(&self.s);
        out[64] = self.v;
        out
    }

    pub fn from_bytes(bytes: &[u8; 65]) -> Signature {
        let mut r = [0u8; 32];
        let mut s = [0u8; 32];
        r.copy_from_slice(&bytes[..32]);
        s.copy_from_slice(&bytes[32..64]);
        Signature { r, s, v: bytes[64] }
    }
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", hex::encode(self.to_bytes()))
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Signature {
    type Err = CryptoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        decode_hex_fixed::<65>(s).map(|b| Signature::from_bytes(&b))
    }
}

hex_text_serde!(Signature);

/// A secp256k1 signing key. Debug output never shows key material.
#[derive(Clone)]
pub struct PrivateKey(SigningKey);

impl PrivateKey {
    pub fn from_bytes(bytes: &[u8; 32]) -> Result<PrivateKey, CryptoError> {
        SigningKey::from_slice(bytes)
            .map(PrivateKey)
            .map_err(|_| CryptoError::InvalidKey)
    }

    pub fn from_hex(text: &str) -> Result<PrivateKey, CryptoError> {
        let trimmed = text.trim();
        let with_prefix = if trimmed.starts_with("0x") || trimmed.starts_with("0X") {
            trimmed.to_string()
        } else {
            format!("0x{trimmed}")
        };
        PrivateKey::from_bytes(&decode_hex_fixed::<32>(&with_prefix)?)
    }

    pub fn random<R: rand::RngCore + rand::CryptoRng>(rng: &mut R) -> PrivateKey {
        PrivateKey(SigningKey::random(rng))
    }

    pub fn to_bytes(&self) -> [u8; 32] {
        self.0.to_bytes().into()
    }

    /// Uncompressed SEC1 encoding (`0x04 || X || Y`).
    pub fn public_key(&self) -> [u8; 65] {
        let point = self.0.verifying_key().to_encoded_point(false);
        let mut out = [0u8; 65];
        out.copy_from_slice(point.as_bytes());
        out
    }

    pub fn address(&self) -> Address {
        address_of(self.0.verifying_key())
    }
}

impl fmt::Debug for PrivateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PrivateKey({})", self.address())
    }
}

/// EIP-712 domain for a token contract.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Eip712Domain {
    pub name: String,
    pub version: String,
    pub chain_id: u64,
    pub verifying_contract: Address,
}

pub const EIP712_DOMAIN_TYPE: &str =
    "EIP712Domain(string name,string version,uint256 chainId,address verifyingContract)";

pub const TRANSFER_WITH_AUTHORIZATION_TYPE: &str = "TransferWithAuthorization(address from,address to,uint256 value,uint256 validAfter,uint256 validBefore,bytes32 nonce)";

pub fn keccak256(data: impl AsRef<[u8]>) -> Digest32 {
    Digest32(Keccak256::digest(data.as_ref()).into())
}

/// Big-endian 32-byte word of an unsigned integer.
pub fn pad32(value: u128) -> [u8; 32] {
    let mut out = [0u8; 32];
    out[16..].copy_from_slice(&value.to_be_bytes());
    out
}

fn address_of(key: &VerifyingKey) -> Address {
    let point = key.to_encoded_point(false);
    let hash = keccak256(&point.as_bytes()[1..]);
    let mut out = [0u8; 20];
    out.copy_from_slice(&hash.0[12..]);
    Address(out)
}

/// Derives the address of an uncompressed public key, given either as the
/// 64-byte `X || Y` form or the 65-byte SEC1 form with `0x04` prefix.
pub fn derive_address(public_key: &[u8]) -> Result<Address, CryptoError> {
    let sec1 = match public_key.len() {
        64 => {
            let mut buf = Vec::with_capacity(65);
            buf.push(0x04);
            buf.extend_from_slice(public_key);
            buf
        }
        65 if public_key[0] == 0x04 => public_key.to_vec(),
        _ => return Err(CryptoError::InvalidKey),
    };
    let key = VerifyingKey::from_sec1_bytes(&sec1).map_err(|_| CryptoError::InvalidKey)?;
    Ok(address_of(&key))
}

pub fn domain_separator(domain: &Eip712Domain) -> Digest32 {
    let mut buf = Vec::with_capacity(32 * 5);
    buf.extend_from_slice(&keccak256(EIP712_DOMAIN_TYPE).0);
    buf.extend_from_slice(&keccak256(domain.name.as_bytes()).0);
    buf.extend_from_slice(&keccak256(domain.version.as_bytes()).0);
    buf.extend_from_slice(&pad32(domain.chain_id as u128));
    buf.extend_from_slice(&domain.verifying_contract.to_word());
    keccak256(buf)
}

pub fn transfer_authorization_typehash() -> Digest32 {
    keccak256(TRANSFER_WITH_AUTHORIZATION_TYPE)
}

pub fn transfer_auth_struct_hash(auth: &TransferAuthorization) -> Digest32 {
    let mut buf = Vec::with_capacity(32 * 7);
    buf.extend_from_slice(&transfer_authorization_typehash().0);
    buf.extend_from_slice(&auth.from.to_word());
    buf.extend_from_slice(&auth.to.to_word());
    buf.extend_from_slice(&pad32(auth.value));
    buf.extend_from_slice(&pad32(auth.valid_after as u128));
    buf.extend_from_slice(&pad32(auth.valid_before as u128));
    buf.extend_from_slice(&auth.nonce.0);
    keccak256(buf)
}

pub fn transfer_auth_digest(separator: &Digest32, auth: &TransferAuthorization) -> Digest32 {
    let mut buf = Vec::with_capacity(2 + 64);
    buf.extend_from_slice(&[0x19, 0x01]);
    buf.extend_from_slice(&separator.0);
    buf.extend_from_slice(&transfer_auth_struct_hash(auth).0);
    keccak256(buf)
}

/// Deterministic (RFC 6979) signature over a prehashed digest, low-s normalized.
pub fn sign(digest: &Digest32, key: &PrivateKey) -> Result<Signature, CryptoError> {
    let (sig, recid) = key
        .0
        .sign_prehash_recoverable(&digest.0)
        .map_err(|_| CryptoError::InvalidKey)?;
    let (sig, recid) = match sig.normalize_s() {
        Some(low) => (
            low,
            RecoveryId::new(!recid.is_y_odd(), recid.is_x_reduced()),
        ),
        None => (sig, recid),
    };
    let bytes = sig.to_bytes();
    let mut r = [0u8; 32];
    let mut s = [0u8; 32];
    r.copy_from_slice(&bytes[..32]);
    s.copy_from_slice(&bytes[32..]);
    Ok(Signature {
        r,
        s,
        v: 27 + recid.to_byte(),
    })
}

/// Recovers the signer address. High-s signatures are rejected.
pub fn recover(digest: &Digest32, sig: &Signature) -> Result<Address, CryptoError> {
    let recid = match sig.v {
        27 | 28 => RecoveryId::from_byte(sig.v - 27).ok_or(CryptoError::InvalidSignature)?,
        _ => return Err(CryptoError::InvalidSignature),
    };
    let ecdsa =
        EcdsaSignature::from_scalars(sig.r, sig.s).map_err(|_| CryptoError::InvalidSignature)?;
    if ecdsa.normalize_s().is_some() {
        return Err(CryptoError::InvalidSignature);
    }
    let key = VerifyingKey::recover_from_prehash(&digest.0, &ecdsa, recid)
        .map_err(|_| CryptoError::InvalidSignature)?;
    Ok(address_of(&key))
}
