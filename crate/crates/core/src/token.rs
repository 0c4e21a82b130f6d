//! Access token lifecycle (generation, rotation, revocation), MAC-bound
//! tracing tokens, and the sealed-document trailer that carries them.
//!
//! Trailer layout, appended after the unmodified payload:
//!
//! ```text
//! offset  size        field
//! 0       4           magic "UIVT"
//! 4       1           embed count ε (1..=4)
//! 5       2           digest width k in bits, big-endian
//! 7       1           false-document flag (0 or 1)
//! 8       8           valid_until millis, big-endian (0 when absent)
//! 16      ε · k/8     ε copies of the tracing token value
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    Digest, DigestWidth, MacAddress, Nonce, ProtocolHasher, SwId, Timestamp, VulId,
    VulnerabilityMeta,
};

pub const TRAILER_MAGIC: &[u8; 4] = b"UIVT";
pub const TRAILER_HEADER_LEN: usize = 16;
pub const MIN_EMBED: u8 = 1;
pub const MAX_EMBED: u8 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenStatus {
    Active,
    Revoked,
}

/// Implicit access credential held by the authority for one (worker, vulnerability) pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AccessToken {
    pub value: Digest,
    pub sw_id: SwId,
    pub vul_id: VulId,
    pub epoch: u64,
    pub status: TokenStatus,
    pub created_at: Timestamp,
}

impl AccessToken {
    pub fn is_active(&self) -> bool {
        self.status == TokenStatus::Active
    }
}

/// Hash of a just-revoked access token bound to the licensed host's MAC.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TracingToken {
    pub value: Digest,
    pub source_epoch: u64,
    pub sw_id: SwId,
    pub vul_id: VulId,
    pub bound_mac: MacAddress,
}

/// Membership test for the registered worker pool.
pub trait WorkerPool {
    fn contains_worker(&self, sw_id: &SwId) -> bool;
}

impl WorkerPool for HashSet<SwId> {
    fn contains_worker(&self, sw_id: &SwId) -> bool {
        self.contains(sw_id)
    }
}

impl WorkerPool for BTreeSet<SwId> {
    fn contains_worker(&self, sw_id: &SwId) -> bool {
        self.contains(sw_id)
    }
}

impl<V> WorkerPool for HashMap<SwId, V> {
    fn contains_worker(&self, sw_id: &SwId) -> bool {
        self.contains_key(sw_id)
    }
}

impl<V> WorkerPool for BTreeMap<SwId, V> {
    fn contains_worker(&self, sw_id: &SwId) -> bool {
        self.contains_key(sw_id)
    }
}

fn access_token_value(
    hasher: &ProtocolHasher,
    sw_id: &SwId,
    meta: &VulnerabilityMeta,
    now: Timestamp,
    nonce: &Nonce,
) -> Digest {
    hasher.hash_fields(&[
        sw_id.as_str().as_bytes(),
        &meta.to_bytes(),
        &now.to_be_bytes(),
        nonce.as_bytes(),
    ])
}

/// Issues an Active token at an explicit epoch. Used for first issue
/// (epoch 0) and for re-issue after a worker is put back on an access list.
pub fn issue_access_token(
    hasher: &ProtocolHasher,
    sw_id: &SwId,
    meta: &VulnerabilityMeta,
    now: Timestamp,
    nonce: &Nonce,
    epoch: u64,
) -> AccessToken {
    AccessToken {
        value: access_token_value(hasher, sw_id, meta, now, nonce),
        sw_id: sw_id.clone(),
        vul_id: meta.vul_id.clone(),
        epoch,
        status: TokenStatus::Active,
        created_at: now,
    }
}

/// Generates the epoch-0 access token for a registered worker.
pub fn generate_access_token(
    hasher: &ProtocolHasher,
    pool: &impl WorkerPool,
    sw_id: &SwId,
    meta: &VulnerabilityMeta,
    now: Timestamp,
    nonce: &Nonce,
) -> Result<AccessToken> {
    if !pool.contains_worker(sw_id) {
        return Err(Error::UnregisteredWorker(sw_id.clone()));
    }
    Ok(issue_access_token(hasher, sw_id, meta, now, nonce, 0))
}

/// Revokes `current` and issues its successor at the next epoch.
///
/// The caller must supply a nonce never used before for this pair; with
/// identical inputs the successor value would equal the revoked one.
pub fn rotate_access_token(
    hasher: &ProtocolHasher,
    current: &AccessToken,
    meta: &VulnerabilityMeta,
    now: Timestamp,
    fresh_nonce: &Nonce,
) -> Result<(AccessToken, AccessToken)> {
    if !current.is_active() {
        return Err(Error::TokenState("cannot rotate a revoked token"));
    }
    if meta.vul_id != current.vul_id {
        return Err(Error::InvalidArgument(format!(
            "token belongs to {} but metadata describes {}",
            current.vul_id, meta.vul_id
        )));
    }
    let revoked = AccessToken {
        status: TokenStatus::Revoked,
        ..current.clone()
    };
    let next = issue_access_token(
        hasher,
        &current.sw_id,
        meta,
        now,
        fresh_nonce,
        current.epoch + 1,
    );
    Ok((revoked, next))
}

pub fn revoke(token: &AccessToken) -> AccessToken {
    AccessToken {
        status: TokenStatus::Revoked,
        ..token.clone()
    }
}

/// The tracing value a guard recomputes: H(revoked token || MAC).
pub fn tracing_value(hasher: &ProtocolHasher, revoked_value: &Digest, mac: &MacAddress) -> Digest {
    hasher.hash_fields(&[revoked_value.as_bytes(), mac.octets()])
}

pub fn derive_tracing_token(
    hasher: &ProtocolHasher,
    revoked: &AccessToken,
    mac: MacAddress,
) -> Result<TracingToken> {
    if revoked.is_active() {
        return Err(Error::TokenState(
            "tracing tokens derive only from revoked tokens",
        ));
    }
    Ok(TracingToken {
        value: tracing_value(hasher, &revoked.value, &mac),
        source_epoch: revoked.epoch,
        sw_id: revoked.sw_id.clone(),
        vul_id: revoked.vul_id.clone(),
        bound_mac: mac,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VulnerabilityDocument {
    pub meta: VulnerabilityMeta,
    pub payload: Vec<u8>,
}

impl VulnerabilityDocument {
    pub fn new(meta: VulnerabilityMeta, payload: Vec<u8>) -> Result<Self> {
        if payload.is_empty() {
            return Err(Error::InvalidArgument(
                "document payload must be non-empty".into(),
            ));
        }
        meta.validate()?;
        Ok(Self { meta, payload })
    }
}

/// A released document carrying ε redundant copies of its tracing token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SealedDocument {
    pub doc: VulnerabilityDocument,
    pub embedded_tokens: Vec<Digest>,
    pub is_false: bool,
    pub valid_until: Option<Timestamp>,
}

impl SealedDocument {
    pub fn embed_count(&self) -> u8 {
        self.embedded_tokens.len() as u8
    }

    pub fn trailer_len(&self) -> usize {
        TRAILER_HEADER_LEN
            + self
                .embedded_tokens
                .iter()
                .map(|t| t.as_bytes().len())
                .sum::<usize>()
    }

    /// Payload followed by the trailer.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.doc.payload.len() + self.trailer_len());
        out.extend_from_slice(&self.doc.payload);
        let width = self.embedded_tokens[0].width();
        out.extend_from_slice(TRAILER_MAGIC);
        out.push(self.embed_count());
        out.extend_from_slice(&(width.bits() as u16).to_be_bytes());
        out.push(u8::from(self.is_false));
        out.extend_from_slice(&self.valid_until.unwrap_or_default().to_be_bytes());
        for token in &self.embedded_tokens {
            out.extend_from_slice(token.as_bytes());
        }
        out
    }
}

pub fn embed_tracing_token(
    doc: VulnerabilityDocument,
    token: &TracingToken,
    embed_count: u8,
    is_false: bool,
    valid_until: Option<Timestamp>,
) -> Result<SealedDocument> {
    if !(MIN_EMBED..=MAX_EMBED).contains(&embed_count) {
        return Err(Error::Config(format!(
            "embed count {embed_count} outside 1..=4"
        )));
    }
    if is_false && valid_until.is_none() {
        return Err(Error::InvalidArgument(
            "a false document needs a valid_until".into(),
        ));
    }
    Ok(SealedDocument {
        doc,
        embedded_tokens: vec![token.value.clone(); embed_count as usize],
        is_false,
        valid_until: if is_false { valid_until } else { None },
    })
}

/// Parsed trailer view over a sealed byte string.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trailer<'a> {
    pub payload_len: usize,
    pub embed_count: u8,
    pub width: DigestWidth,
    pub is_false: bool,
    pub valid_until: Option<Timestamp>,
    copies: &'a [u8],
}

impl<'a> Trailer<'a> {
    /// Locates a trailer at the end of `bytes`, trying every (ε, k) whose
    /// total length fits and whose header matches.
    pub fn parse(bytes: &'a [u8]) -> Option<Self> {
        for width in DigestWidth::ALL {
            for embed in MIN_EMBED..=MAX_EMBED {
                let copies_len = embed as usize * width.bytes();
                let total = TRAILER_HEADER_LEN + copies_len;
                if bytes.len() < total {
                    continue;
                }
                let start = bytes.len() - total;
                let t = &bytes[start..];
                if &t[0..4] != TRAILER_MAGIC
                    || t[4] != embed
                    || u16::from_be_bytes([t[5], t[6]]) as u32 != width.bits()
                    || t[7] > 1
                {
                    continue;
                }
                let is_false = t[7] == 1;
                let until = u64::from_be_bytes(t[8..16].try_into().expect("8 bytes"));
                return Some(Trailer {
                    payload_len: start,
                    embed_count: embed,
                    width,
                    is_false,
                    valid_until: is_false.then_some(Timestamp(until)),
                    copies: &t[TRAILER_HEADER_LEN..],
                });
            }
        }
        None
    }

    pub fn copy(&self, index: usize) -> &'a [u8] {
        let n = self.width.bytes();
        &self.copies[index * n..(index + 1) * n]
    }

    /// The embedded value, provided all ε copies agree byte for byte.
    pub fn unanimous_value(&self) -> Result<Digest> {
        let first = self.copy(0);
        for i in 1..self.embed_count as usize {
            if self.copy(i) != first {
                return Err(Error::Integrity(format!(
                    "embedded tracing copy {i} disagrees with copy 0"
                )));
            }
        }
        Digest::from_bytes(first)
    }
}

/// Returns the embedded tracing value, `None` when no trailer is present,
/// or an integrity error when the copies disagree.
pub fn extract_tracing_token(sealed: &[u8]) -> Result<Option<Digest>> {
    match Trailer::parse(sealed) {
        None => Ok(None),
        Some(trailer) => trailer.unanimous_value().map(Some),
    }
}
