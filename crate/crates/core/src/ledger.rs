//! Private, single-writer hash-chained block store for the continuous logs.
//!
//! Each block head links to the previous head hash and commits to its body
//! through a binary Merkle root over leaf hashes. Query indexes are derived
//! from the blocks on append and on load; they are never persisted.
//!
//! On disk a chain is JSON Lines, one block per line, with fields in the
//! order `block_id, prev_hash, timestamp, merkle_root, sw_id, trust_value,
//! vul_meta_digest, leaves, block_hash`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    canonical_encode, digest, digest_fields, Digest, DigestWidth, MacAddress, SwId, Timestamp,
    VulId, VulnerabilityMeta,
};
use crate::token::{AccessToken, TokenStatus, TracingToken};

/// One record in a block body.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum LogLeaf {
    #[serde(rename = "AccessTokenLeaf")]
    AccessToken {
        value: Digest,
        sw_id: SwId,
        vul_id: VulId,
        epoch: u64,
        status: TokenStatus,
    },
    #[serde(rename = "TracingTokenLeaf")]
    TracingToken {
        value: Digest,
        sw_id: SwId,
        vul_id: VulId,
        bound_mac: MacAddress,
    },
    #[serde(rename = "TrustOldLeaf")]
    TrustOld { sec: u64, lek: u64 },
    #[serde(rename = "TrustNewLeaf")]
    TrustNew { sec: u64, lek: u64 },
    #[serde(rename = "AccessRequestLeaf")]
    AccessRequest {
        sw_id: SwId,
        vul_id: VulId,
        time: Timestamp,
    },
    #[serde(rename = "FalseFlagLeaf")]
    FalseFlag { flag: bool },
}

impl LogLeaf {
    pub fn access_token(token: &AccessToken) -> Self {
        LogLeaf::AccessToken {
            value: token.value.clone(),
            sw_id: token.sw_id.clone(),
            vul_id: token.vul_id.clone(),
            epoch: token.epoch,
            status: token.status,
        }
    }

    pub fn tracing_token(token: &TracingToken) -> Self {
        LogLeaf::TracingToken {
            value: token.value.clone(),
            sw_id: token.sw_id.clone(),
            vul_id: token.vul_id.clone(),
            bound_mac: token.bound_mac,
        }
    }

    pub fn kind_byte(&self) -> u8 {
        match self {
            LogLeaf::AccessToken { .. } => 1,
            LogLeaf::TracingToken { .. } => 2,
            LogLeaf::TrustOld { .. } => 3,
            LogLeaf::TrustNew { .. } => 4,
            LogLeaf::AccessRequest { .. } => 5,
            LogLeaf::FalseFlag { .. } => 6,
        }
    }

    /// Kind byte followed by the canonical encoding of the body fields.
    pub fn encode(&self) -> Vec<u8> {
        let body = match self {
            LogLeaf::AccessToken {
                value,
                sw_id,
                vul_id,
                epoch,
                status,
            } => canonical_encode(&[
                value.as_bytes(),
                sw_id.as_str().as_bytes(),
                vul_id.as_str().as_bytes(),
                &epoch.to_be_bytes(),
                &[match status {
                    TokenStatus::Active => 0,
                    TokenStatus::Revoked => 1,
                }],
            ]),
            LogLeaf::TracingToken {
                value,
                sw_id,
                vul_id,
                bound_mac,
            } => canonical_encode(&[
                value.as_bytes(),
                sw_id.as_str().as_bytes(),
                vul_id.as_str().as_bytes(),
                bound_mac.octets(),
            ]),
            LogLeaf::TrustOld { sec, lek } | LogLeaf::TrustNew { sec, lek } => {
                canonical_encode(&[&sec.to_be_bytes(), &lek.to_be_bytes()])
            }
            LogLeaf::AccessRequest {
                sw_id,
                vul_id,
                time,
            } => canonical_encode(&[
                sw_id.as_str().as_bytes(),
                vul_id.as_str().as_bytes(),
                &time.to_be_bytes(),
            ]),
            LogLeaf::FalseFlag { flag } => canonical_encode(&[&[u8::from(*flag)]]),
        };
        let mut out = Vec::with_capacity(1 + body.len());
        out.push(self.kind_byte());
        out.extend_from_slice(&body);
        out
    }

    pub fn hash(&self, width: DigestWidth) -> Digest {
        digest(&self.encode(), width)
    }
}

/// Binary Merkle root; an odd node at any level is paired with itself.
pub fn merkle_root(leaf_hashes: &[Digest]) -> Result<Digest> {
    let first = leaf_hashes
        .first()
        .ok_or_else(|| Error::InvalidArgument("merkle root of an empty leaf list".into()))?;
    let width = first.width();
    let mut level: Vec<Digest> = leaf_hashes.to_vec();
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|pair| {
                let left = &pair[0];
                let right = pair.get(1).unwrap_or(left);
                digest_fields(&[left.as_bytes(), right.as_bytes()], width)
            })
            .collect();
    }
    Ok(level.pop().expect("non-empty level"))
}

pub fn meta_digest(meta: &VulnerabilityMeta, width: DigestWidth) -> Digest {
    digest(&meta.to_bytes(), width)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockHead {
    pub block_id: u64,
    pub prev_hash: Digest,
    pub timestamp: Timestamp,
    pub merkle_root: Digest,
    pub sw_id: SwId,
    pub trust_value: f64,
    pub vul_meta_digest: Digest,
}

impl BlockHead {
    pub fn hash(&self) -> Digest {
        digest_fields(
            &[
                &self.block_id.to_be_bytes(),
                self.prev_hash.as_bytes(),
                &self.timestamp.to_be_bytes(),
                self.merkle_root.as_bytes(),
                self.sw_id.as_str().as_bytes(),
                &self.trust_value.to_bits().to_be_bytes(),
                self.vul_meta_digest.as_bytes(),
            ],
            self.prev_hash.width(),
        )
    }
}

/// A head, its leaves, and the sealed head hash.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "BlockRecord", into = "BlockRecord")]
pub struct Block {
    pub head: BlockHead,
    pub leaves: Vec<LogLeaf>,
    pub hash: Digest,
}

#[derive(Serialize, Deserialize)]
struct BlockRecord {
    block_id: u64,
    prev_hash: Digest,
    timestamp: Timestamp,
    merkle_root: Digest,
    sw_id: SwId,
    trust_value: f64,
    vul_meta_digest: Digest,
    leaves: Vec<LogLeaf>,
    block_hash: Digest,
}

impl From<BlockRecord> for Block {
    fn from(r: BlockRecord) -> Self {
        Block {
            head: BlockHead {
                block_id: r.block_id,
                prev_hash: r.prev_hash,
                timestamp: r.timestamp,
                merkle_root: r.merkle_root,
                sw_id: r.sw_id,
                trust_value: r.trust_value,
                vul_meta_digest: r.vul_meta_digest,
            },
            leaves: r.leaves,
            hash: r.block_hash,
        }
    }
}

impl From<Block> for BlockRecord {
    fn from(b: Block) -> Self {
        BlockRecord {
            block_id: b.head.block_id,
            prev_hash: b.head.prev_hash,
            timestamp: b.head.timestamp,
            merkle_root: b.head.merkle_root,
            sw_id: b.head.sw_id,
            trust_value: b.head.trust_value,
            vul_meta_digest: b.head.vul_meta_digest,
            leaves: b.leaves,
            block_hash: b.hash,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InvalidReason {
    EmptyBody,
    HeightMismatch,
    WidthMismatch,
    LinkMismatch,
    MerkleMismatch,
    HeadHashMismatch,
    TimestampRegression,
    TrustOutOfRange,
}

impl fmt::Display for InvalidReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            InvalidReason::EmptyBody => "empty block body",
            InvalidReason::HeightMismatch => "block id does not match height",
            InvalidReason::WidthMismatch => "digest width differs from the chain",
            InvalidReason::LinkMismatch => "prev_hash does not match the previous head",
            InvalidReason::MerkleMismatch => "merkle root does not match the leaves",
            InvalidReason::HeadHashMismatch => "head hash does not match the head",
            InvalidReason::TimestampRegression => "timestamp earlier than the previous block",
            InvalidReason::TrustOutOfRange => "trust value outside [0, 1]",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verification {
    Valid,
    Invalid { height: u64, reason: InvalidReason },
}

impl Verification {
    pub fn is_valid(&self) -> bool {
        matches!(self, Verification::Valid)
    }
}

/// Result of resolving a tracing value back to its licence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TracingRecord {
    pub sw_id: SwId,
    pub vul_id: VulId,
    pub bound_mac: MacAddress,
    pub block_id: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrustRecord {
    pub sec: u64,
    pub lek: u64,
    pub trust_value: f64,
}

#[derive(Clone, Debug, Default)]
struct Indexes {
    tracing: HashMap<Digest, TracingRecord>,
    /// (block, leaf, epoch) of the live Active token per pair.
    access: HashMap<(SwId, VulId), (usize, usize, u64)>,
    trust: HashMap<SwId, (usize, usize)>,
}

impl Indexes {
    fn absorb(&mut self, height: usize, block: &Block) {
        for (i, leaf) in block.leaves.iter().enumerate() {
            match leaf {
                LogLeaf::TracingToken {
                    value,
                    sw_id,
                    vul_id,
                    bound_mac,
                } => {
                    self.tracing.insert(
                        value.clone(),
                        TracingRecord {
                            sw_id: sw_id.clone(),
                            vul_id: vul_id.clone(),
                            bound_mac: *bound_mac,
                            block_id: block.head.block_id,
                        },
                    );
                }
                LogLeaf::AccessToken {
                    sw_id,
                    vul_id,
                    epoch,
                    status,
                    ..
                } => {
                    let key = (sw_id.clone(), vul_id.clone());
                    match status {
                        TokenStatus::Active => {
                            self.access.insert(key, (height, i, *epoch));
                        }
                        TokenStatus::Revoked => {
                            // A revocation retires any active leaf at or below its epoch.
                            if self
                                .access
                                .get(&key)
                                .is_some_and(|&(_, _, live)| live <= *epoch)
                            {
                                self.access.remove(&key);
                            }
                        }
                    }
                }
                LogLeaf::TrustNew { .. } => {
                    self.trust.insert(block.head.sw_id.clone(), (height, i));
                }
                _ => {}
            }
        }
    }
}

/// Append-only chain with its derived query indexes.
#[derive(Clone, Debug)]
pub struct Chain {
    width: DigestWidth,
    blocks: Vec<Block>,
    index: Indexes,
}

impl Chain {
    pub fn new(width: DigestWidth) -> Self {
        Self {
            width,
            blocks: Vec::new(),
            index: Indexes::default(),
        }
    }

    /// Builds a chain from existing blocks without verifying them; call
    /// [`Chain::verify`] to check integrity.
    pub fn from_blocks(width: DigestWidth, blocks: Vec<Block>) -> Self {
        let mut chain = Self::new(width);
        for block in blocks {
            chain.push_indexed(block);
        }
        chain
    }

    fn push_indexed(&mut self, block: Block) {
        self.index.absorb(self.blocks.len(), &block);
        self.blocks.push(block);
    }

    pub fn width(&self) -> DigestWidth {
        self.width
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn into_blocks(self) -> Vec<Block> {
        self.blocks
    }

    pub fn tip_hash(&self) -> Digest {
        self.blocks
            .last()
            .map(|b| b.hash.clone())
            .unwrap_or_else(|| Digest::zero(self.width))
    }

    pub fn append_block(
        &mut self,
        sw_id: &SwId,
        trust_value: f64,
        vul_meta_digest: Digest,
        leaves: Vec<LogLeaf>,
        now: Timestamp,
    ) -> Result<&BlockHead> {
        if leaves.is_empty() {
            return Err(Error::InvalidArgument(
                "a block needs at least one leaf".into(),
            ));
        }
        if !(0.0..=1.0).contains(&trust_value) {
            return Err(Error::InvalidArgument(format!(
                "trust value {trust_value} outside [0, 1]"
            )));
        }
        if vul_meta_digest.width() != self.width {
            return Err(Error::InvalidArgument(
                "vul_meta digest width differs from chain".into(),
            ));
        }
        if let Some(last) = self.blocks.last() {
            if now < last.head.timestamp {
                return Err(Error::InvalidArgument(format!(
                    "timestamp {} precedes the tip at {}",
                    now.0, last.head.timestamp.0
                )));
            }
        }
        let hashes: Vec<Digest> = leaves.iter().map(|l| l.hash(self.width)).collect();
        let head = BlockHead {
            block_id: self.blocks.len() as u64,
            prev_hash: self.tip_hash(),
            timestamp: now,
            merkle_root: merkle_root(&hashes)?,
            sw_id: sw_id.clone(),
            trust_value,
            vul_meta_digest,
        };
        let hash = head.hash();
        self.push_indexed(Block { head, leaves, hash });
        Ok(&self.blocks.last().expect("just pushed").head)
    }

    pub fn verify(&self) -> Verification {
        let mut prev = Digest::zero(self.width);
        let mut last_time = Timestamp(0);
        for (height, block) in self.blocks.iter().enumerate() {
            let height_u = height as u64;
            let invalid = |reason| Verification::Invalid {
                height: height_u,
                reason,
            };
            let head = &block.head;
            if head.block_id != height_u {
                return invalid(InvalidReason::HeightMismatch);
            }
            if head.prev_hash.width() != self.width
                || head.merkle_root.width() != self.width
                || head.vul_meta_digest.width() != self.width
                || block.hash.width() != self.width
            {
                return invalid(InvalidReason::WidthMismatch);
            }
            if head.prev_hash != prev {
                return invalid(InvalidReason::LinkMismatch);
            }
            if block.leaves.is_empty() {
                return invalid(InvalidReason::EmptyBody);
            }
            let hashes: Vec<Digest> = block.leaves.iter().map(|l| l.hash(self.width)).collect();
            if merkle_root(&hashes).ok().as_ref() != Some(&head.merkle_root) {
                return invalid(InvalidReason::MerkleMismatch);
            }
            if !(0.0..=1.0).contains(&head.trust_value) {
                return invalid(InvalidReason::TrustOutOfRange);
            }
            if head.timestamp < last_time {
                return invalid(InvalidReason::TimestampRegression);
            }
            let recomputed = head.hash();
            if recomputed != block.hash {
                return invalid(InvalidReason::HeadHashMismatch);
            }
            prev = recomputed;
            last_time = head.timestamp;
        }
        Verification::Valid
    }

    /// Newest Active access-token leaf for the pair that has not since been
    /// revoked.
    pub fn latest_access_token(&self, sw_id: &SwId, vul_id: &VulId) -> Option<&LogLeaf> {
        let &(b, l, _) = self.index.access.get(&(sw_id.clone(), vul_id.clone()))?;
        Some(&self.blocks[b].leaves[l])
    }

    /// The active token as a value, with `created_at` taken from its block.
    pub fn active_token(&self, sw_id: &SwId, vul_id: &VulId) -> Option<AccessToken> {
        let &(b, l, _) = self.index.access.get(&(sw_id.clone(), vul_id.clone()))?;
        let block = &self.blocks[b];
        match &block.leaves[l] {
            LogLeaf::AccessToken {
                value,
                sw_id,
                vul_id,
                epoch,
                status,
            } => Some(AccessToken {
                value: value.clone(),
                sw_id: sw_id.clone(),
                vul_id: vul_id.clone(),
                epoch: *epoch,
                status: *status,
                created_at: block.head.timestamp,
            }),
            _ => None,
        }
    }

    /// Counts from the newest TrustNew leaf in a block headed by `sw_id`,
    /// with that block's head trust value.
    pub fn latest_trust(&self, sw_id: &SwId) -> Option<TrustRecord> {
        let &(b, l) = self.index.trust.get(sw_id)?;
        let block = &self.blocks[b];
        match block.leaves[l] {
            LogLeaf::TrustNew { sec, lek } => Some(TrustRecord {
                sec,
                lek,
                trust_value: block.head.trust_value,
            }),
            _ => None,
        }
    }

    pub fn lookup_by_tracing_token(&self, tracing_value: &Digest) -> Option<&TracingRecord> {
        self.index.tracing.get(tracing_value)
    }

    /// Whether the block carries a raised false-document flag.
    pub fn is_false_release(&self, block_id: u64) -> bool {
        self.blocks.get(block_id as usize).is_some_and(|b| {
            b.leaves
                .iter()
                .any(|l| matches!(l, LogLeaf::FalseFlag { flag: true }))
        })
    }

    /// Rebuilds every worker's trust record by scanning the whole chain.
    pub fn replay_trust(&self) -> BTreeMap<SwId, TrustRecord> {
        let mut out = BTreeMap::new();
        for block in &self.blocks {
            for leaf in &block.leaves {
                if let LogLeaf::TrustNew { sec, lek } = *leaf {
                    out.insert(
                        block.head.sw_id.clone(),
                        TrustRecord {
                            sec,
                            lek,
                            trust_value: block.head.trust_value,
                        },
                    );
                }
            }
        }
        out
    }

    /// All (block_id, leaf) pairs in append order.
    pub fn leaves(&self) -> impl Iterator<Item = (u64, &LogLeaf)> {
        self.blocks
            .iter()
            .flat_map(|b| b.leaves.iter().map(move |l| (b.head.block_id, l)))
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for block in &self.blocks {
            serde_json::to_writer(&mut out, block)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_jsonl(std::io::BufWriter::new(file))
    }

    /// Reads a JSON Lines chain; the width comes from the first block.
    /// An empty input yields an empty 256-bit chain.
    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut blocks = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let block: Block = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            blocks.push(block);
        }
        let width = blocks
            .first()
            .map_or(DigestWidth::K256, |b| b.head.prev_hash.width());
        Ok(Self::from_blocks(width, blocks))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_jsonl(std::io::BufReader::new(file))
    }
}
