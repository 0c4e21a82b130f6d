//! Shared primitive types, the canonical byte encoding used for every hash
//! input, and the width-selectable digest function.
//!
//! Digests render as lowercase hex everywhere they leave the process
//! (ledger files, CSV, logs).

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256, Sha512};

use crate::error::{Error, Result};

/// Security worker identifier.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SwId(Arc<str>);

impl SwId {
    pub fn new(value: impl AsRef<str>) -> Result<Self> {
        let value = value.as_ref();
        if value.is_empty() {
            return Err(Error::InvalidArgument("worker id must be non-empty".into()));
        }
        Ok(Self(Arc::from(value)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SwId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for SwId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SwId({})", self.0)
    }
}

/// Vulnerability identifier.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VulId(Arc<str>);

impl VulId {
    pub fn new(value: impl AsRef<str>) -> Result<Self> {
        let value = value.as_ref();
        if value.is_empty() {
            return Err(Error::InvalidArgument(
                "vulnerability id must be non-empty".into(),
            ));
        }
        Ok(Self(Arc::from(value)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for VulId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for VulId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VulId({})", self.0)
    }
}

macro_rules! string_serde {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.serialize_str(self.as_str())
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                <$ty>::new(s).map_err(serde::de::Error::custom)
            }
        }
    };
}

string_serde!(SwId);
string_serde!(VulId);

/// A 6-octet hardware address. Text form is lowercase, colon separated.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MacAddress(pub [u8; 6]);

impl MacAddress {
    pub fn octets(&self) -> &[u8; 6] {
        &self.0
    }

    /// Random locally administered unicast address.
    pub fn random<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut octets = [0u8; 6];
        rng.fill_bytes(&mut octets);
        octets[0] = (octets[0] | 0x02) & 0xfe;
        Self(octets)
    }
}

impl fmt::Display for MacAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let o = &self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            o[0], o[1], o[2], o[3], o[4], o[5]
        )
    }
}

impl fmt::Debug for MacAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MacAddress({self})")
    }
}

impl FromStr for MacAddress {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("malformed MAC address {s:?}"));
        let mut octets = [0u8; 6];
        let mut parts = s.split(':');
        for octet in octets.iter_mut() {
            let part = parts.next().ok_or_else(bad)?;
            if part.len() != 2 {
                return Err(bad());
            }
            *octet = u8::from_str_radix(part, 16).map_err(|_| bad())?;
        }
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(Self(octets))
    }
}

impl Serialize for MacAddress {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MacAddress {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Milliseconds on the run's logical clock.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub fn millis(self) -> u64 {
        self.0
    }

    pub fn saturating_add(self, millis: u64) -> Self {
        Self(self.0.saturating_add(millis))
    }

    pub fn to_be_bytes(self) -> [u8; 8] {
        self.0.to_be_bytes()
    }
}

/// One-time random value mixed into every access token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Nonce(pub [u8; 16]);

impl Nonce {
    pub fn as_bytes(&self) -> &[u8; 16] {
        &self.0
    }
}

/// Draws a fresh nonce from the run's generator.
pub fn random_nonce<R: RngCore + ?Sized>(rng: &mut R) -> Nonce {
    let mut bytes = [0u8; 16];
    rng.fill_bytes(&mut bytes);
    Nonce(bytes)
}

/// Token and ledger digest width `k`, in bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum DigestWidth {
    K256,
    K512,
    K1024,
}

impl DigestWidth {
    pub const ALL: [DigestWidth; 3] = [DigestWidth::K256, DigestWidth::K512, DigestWidth::K1024];

    pub fn bits(self) -> u32 {
        match self {
            DigestWidth::K256 => 256,
            DigestWidth::K512 => 512,
            DigestWidth::K1024 => 1024,
        }
    }

    pub fn bytes(self) -> usize {
        self.bits() as usize / 8
    }

    pub fn from_bits(bits: u32) -> Result<Self> {
        match bits {
            256 => Ok(DigestWidth::K256),
            512 => Ok(DigestWidth::K512),
            1024 => Ok(DigestWidth::K1024),
            other => Err(Error::Config(format!(
                "unsupported digest width {other}; expected 256, 512 or 1024"
            ))),
        }
    }

    pub fn from_byte_len(len: usize) -> Option<Self> {
        match len {
            32 => Some(DigestWidth::K256),
            64 => Some(DigestWidth::K512),
            128 => Some(DigestWidth::K1024),
            _ => None,
        }
    }
}

impl TryFrom<u32> for DigestWidth {
    type Error = Error;

    fn try_from(bits: u32) -> Result<Self> {
        Self::from_bits(bits)
    }
}

impl From<DigestWidth> for u32 {
    fn from(w: DigestWidth) -> u32 {
        w.bits()
    }
}

impl fmt::Display for DigestWidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.bits())
    }
}

/// A k-bit digest.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest(Box<[u8]>);

impl Digest {
    pub fn from_bytes(bytes: impl Into<Box<[u8]>>) -> Result<Self> {
        let bytes = bytes.into();
        if DigestWidth::from_byte_len(bytes.len()).is_none() {
            return Err(Error::InvalidArgument(format!(
                "digest length {} is not 32, 64 or 128 bytes",
                bytes.len()
            )));
        }
        Ok(Self(bytes))
    }

    pub fn zero(width: DigestWidth) -> Self {
        Self(vec![0u8; width.bytes()].into_boxed_slice())
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn width(&self) -> DigestWidth {
        DigestWidth::from_byte_len(self.0.len()).expect("digest length checked on construction")
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        let bytes =
            hex::decode(s).map_err(|e| Error::InvalidArgument(format!("bad digest hex: {e}")))?;
        Self::from_bytes(bytes)
    }
}

impl AsRef<[u8]> for Digest {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let hex = self.to_hex();
        write!(f, "Digest({}..)", &hex[..16])
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// Metadata describing a reported, still undisclosed vulnerability.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VulnerabilityMeta {
    pub vul_id: VulId,
    pub vendor: String,
    pub device_class: String,
    pub severity: u8,
    pub reported_at: Timestamp,
}

impl VulnerabilityMeta {
    pub const MAX_SEVERITY: u8 = 10;

    pub fn validate(&self) -> Result<()> {
        if self.severity > Self::MAX_SEVERITY {
            return Err(Error::InvalidArgument(format!(
                "severity {} outside 0..=10",
                self.severity
            )));
        }
        Ok(())
    }

    /// Canonical byte form, used as the `vul_meta` hash field.
    pub fn to_bytes(&self) -> Vec<u8> {
        canonical_encode(&[
            self.vul_id.as_str().as_bytes(),
            self.vendor.as_bytes(),
            self.device_class.as_bytes(),
            &[self.severity],
            &self.reported_at.to_be_bytes(),
        ])
    }
}

/// Length-prefixed concatenation: a big-endian u32 field count, then each
/// field as a big-endian u32 length followed by its bytes.
pub fn canonical_encode(fields: &[&[u8]]) -> Vec<u8> {
    let len = 4 + fields.iter().map(|f| 4 + f.len()).sum::<usize>();
    let mut out = Vec::with_capacity(len);
    out.extend_from_slice(&(fields.len() as u32).to_be_bytes());
    for field in fields {
        out.extend_from_slice(&(field.len() as u32).to_be_bytes());
        out.extend_from_slice(field);
    }
    out
}

/// k=256 is SHA-256, k=512 is SHA-512, k=1024 is two SHA-512 halves over
/// `0x00 || data` and `0x01 || data`.
pub fn digest(data: &[u8], width: DigestWidth) -> Digest {
    let bytes: Box<[u8]> = match width {
        DigestWidth::K256 => Box::from(Sha256::digest(data).as_slice()),
        DigestWidth::K512 => Box::from(Sha512::digest(data).as_slice()),
        DigestWidth::K1024 => {
            let mut out = Vec::with_capacity(128);
            for prefix in [0u8, 1u8] {
                let mut h = Sha512::new();
                h.update([prefix]);
                h.update(data);
                out.extend_from_slice(&h.finalize());
            }
            out.into_boxed_slice()
        }
    };
    Digest(bytes)
}

/// `digest(&canonical_encode(fields), width)` without building the
/// encoding in memory.
pub fn digest_fields(fields: &[&[u8]], width: DigestWidth) -> Digest {
    fn feed<D: sha2::Digest>(h: &mut D, fields: &[&[u8]]) {
        h.update((fields.len() as u32).to_be_bytes());
        for field in fields {
            h.update((field.len() as u32).to_be_bytes());
            h.update(field);
        }
    }
    let bytes: Box<[u8]> = match width {
        DigestWidth::K256 => {
            let mut h = Sha256::new();
            feed(&mut h, fields);
            Box::from(h.finalize().as_slice())
        }
        DigestWidth::K512 => {
            let mut h = Sha512::new();
            feed(&mut h, fields);
            Box::from(h.finalize().as_slice())
        }
        DigestWidth::K1024 => {
            let mut out = Vec::with_capacity(128);
            for prefix in [0u8, 1u8] {
                let mut h = Sha512::new();
                h.update([prefix]);
                feed(&mut h, fields);
                out.extend_from_slice(&h.finalize());
            }
            out.into_boxed_slice()
        }
    };
    Digest(bytes)
}

/// `digest` with the width given as a bit count.
pub fn digest_bits(data: &[u8], width_k: u32) -> Result<Digest> {
    Ok(digest(data, DigestWidth::from_bits(width_k)?))
}

/// Tally of cryptographic operation classes performed by the protocol.
///
/// The scheme only ever hashes; the other classes exist so callers can
/// assert they stay at zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub hash: u64,
    pub symmetric: u64,
    pub public_key: u64,
    pub exponentiation: u64,
}

/// Digest function for protocol hashes (token generation, rotation,
/// tracing derivation, guard verification) that counts its invocations.
///
/// Ledger hashing (leaves, Merkle nodes, heads) goes through [`digest`]
/// directly and is not counted.
#[derive(Debug)]
pub struct ProtocolHasher {
    width: DigestWidth,
    hashes: AtomicU64,
}

impl ProtocolHasher {
    pub fn new(width: DigestWidth) -> Self {
        Self {
            width,
            hashes: AtomicU64::new(0),
        }
    }

    pub fn width(&self) -> DigestWidth {
        self.width
    }

    /// One logical hash invocation over the canonical encoding of `fields`.
    pub fn hash_fields(&self, fields: &[&[u8]]) -> Digest {
        self.hashes.fetch_add(1, Ordering::Relaxed);
        digest_fields(fields, self.width)
    }

    pub fn invocations(&self) -> u64 {
        self.hashes.load(Ordering::Relaxed)
    }

    pub fn op_counts(&self) -> OpCounts {
        OpCounts {
            hash: self.invocations(),
            ..OpCounts::default()
        }
    }
}
