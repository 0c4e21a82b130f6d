//! The trusted authority: worker registry, vulnerability submission and
//! access lists, the request pipeline (ledger token lookup, trust gate,
//! rotation, tracing, sealing), feedback processing and trap bookkeeping.
//!
//! The authority is a single sequential actor. Every state change is
//! appended to its chain as one block, and trust is always read back from
//! the chain at request time.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guard::{FeedbackMessage, GuardContext, ProtectedCopy};
use crate::ledger::{meta_digest, Chain, LogLeaf};
use crate::model::{
    random_nonce, Digest, DigestWidth, MacAddress, ProtocolHasher, SwId, Timestamp, VulId,
};
use crate::token::{
    derive_tracing_token, embed_tracing_token, issue_access_token, revoke, rotate_access_token,
    SealedDocument, TracingToken, VulnerabilityDocument,
};
use crate::trust::{
    apply_conspirator_rule, classify, register_outcome, Classification, ConspiracyState, Outcome,
    PenaltyMode, Thresholds, TrustState,
};

/// Sharing scheme: with the trust gate (`UivTsp`) or the trust-free
/// baseline (`UivSp`), which releases real documents to every listed
/// worker holding a token.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    UivTsp,
    UivSp,
}

impl Scheme {
    pub const BOTH: [Scheme; 2] = [Scheme::UivTsp, Scheme::UivSp];

    pub fn has_trust_gate(self) -> bool {
        self == Scheme::UivTsp
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::UivTsp => "uiv-tsp",
            Scheme::UivSp => "uiv-sp",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uiv-tsp" => Ok(Scheme::UivTsp),
            "uiv-sp" => Ok(Scheme::UivSp),
            other => Err(Error::Config(format!("unknown scheme {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AuthorityConfig {
    pub width: DigestWidth,
    pub thresholds: Thresholds,
    pub penalty_mode: PenaltyMode,
    pub embed_count: u8,
    /// Lifetime of a trap document, in logical milliseconds.
    pub trap_window: u64,
    pub scheme: Scheme,
    pub seed: u64,
}

impl Default for AuthorityConfig {
    fn default() -> Self {
        Self {
            width: DigestWidth::K256,
            thresholds: Thresholds::default(),
            penalty_mode: PenaltyMode::OnLeak,
            embed_count: 1,
            trap_window: 5_000,
            scheme: Scheme::UivTsp,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AccessRequest {
    pub sw_id: SwId,
    pub vul_id: VulId,
    pub time: Timestamp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DenyReason {
    Unregistered,
    Removed,
    UnknownVulnerability,
    NotOnList,
    NoActiveToken,
    Untrusted,
}

/// A released document plus what its guard carries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Release {
    pub sealed: SealedDocument,
    pub tracing: TracingToken,
    pub revoked_token_value: Digest,
}

impl Release {
    /// The copy delivered to the licensed host.
    pub fn licensed_copy(&self) -> ProtectedCopy {
        ProtectedCopy {
            bytes: self.sealed.to_bytes(),
            revoked_token_value: self.revoked_token_value.clone(),
            ctx: GuardContext {
                sw_id: self.tracing.sw_id.clone(),
                vul_id: self.tracing.vul_id.clone(),
            },
            host: self.tracing.bound_mac,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AccessDecision {
    Denied(DenyReason),
    GrantedReal(Release),
    GrantedFalse(Release),
}

#[derive(Clone, Debug, PartialEq)]
pub enum FeedbackOutcome {
    /// Unknown tracing value.
    Ignored,
    LeakRecorded {
        sw_id: SwId,
        trust: TrustState,
        classification: Classification,
    },
    TrapObserved {
        sw_id: SwId,
        mu: usize,
        new_conspirator: bool,
        removed: bool,
    },
}

#[derive(Clone, Debug)]
pub struct WorkerRecord {
    pub sw_id: SwId,
    pub mac: MacAddress,
    pub conspiracy: ConspiracyState,
    pub classification: Classification,
}

impl WorkerRecord {
    pub fn is_removed(&self) -> bool {
        self.classification == Classification::Removed
    }
}

#[derive(Clone, Debug)]
struct VulnEntry {
    doc: VulnerabilityDocument,
    meta_digest: Digest,
    allowed: BTreeSet<SwId>,
    last_epoch: BTreeMap<SwId, u64>,
}

/// Real grants awaiting either a leak or a clean end of cycle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum HoldState {
    Holding,
    Leaked,
}

/// A trap release awaiting the end of its window.
#[derive(Clone, Debug)]
struct PendingTrap {
    sw_id: SwId,
    vul_id: VulId,
    tracing_value: Digest,
    valid_until: Timestamp,
    leaked: bool,
}

pub struct Authority {
    cfg: AuthorityConfig,
    hasher: ProtocolHasher,
    chain: Chain,
    workers: BTreeMap<SwId, WorkerRecord>,
    vulns: BTreeMap<VulId, VulnEntry>,
    holds: HashMap<(SwId, VulId), HoldState>,
    traps: Vec<PendingTrap>,
    rng: ChaCha8Rng,
    clock: Timestamp,
    ignored_feedback: u64,
}

impl Authority {
    pub fn new(cfg: AuthorityConfig) -> Result<Self> {
        cfg.thresholds.validate()?;
        if !(1..=4).contains(&cfg.embed_count) {
            return Err(Error::Config(format!(
                "embed count {} outside 1..=4",
                cfg.embed_count
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        Ok(Self {
            hasher: ProtocolHasher::new(cfg.width),
            chain: Chain::new(cfg.width),
            workers: BTreeMap::new(),
            vulns: BTreeMap::new(),
            holds: HashMap::new(),
            traps: Vec::new(),
            rng,
            clock: Timestamp(0),
            ignored_feedback: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &AuthorityConfig {
        &self.cfg
    }

    pub fn chain(&self) -> &Chain {
        &self.chain
    }

    pub fn into_chain(self) -> Chain {
        self.chain
    }

    pub fn hasher(&self) -> &ProtocolHasher {
        &self.hasher
    }

    pub fn now(&self) -> Timestamp {
        self.clock
    }

    /// Moves the logical clock forward; never backwards.
    pub fn advance_to(&mut self, t: Timestamp) {
        self.clock = self.clock.max(t);
    }

    fn tick(&mut self) -> Timestamp {
        self.clock = self.clock.saturating_add(1);
        self.clock
    }

    pub fn ignored_feedback(&self) -> u64 {
        self.ignored_feedback
    }

    pub fn worker(&self, sw_id: &SwId) -> Option<&WorkerRecord> {
        self.workers.get(sw_id)
    }

    pub fn workers(&self) -> impl Iterator<Item = &WorkerRecord> {
        self.workers.values()
    }

    pub fn access_list(&self, vul_id: &VulId) -> Option<&BTreeSet<SwId>> {
        self.vulns.get(vul_id).map(|v| &v.allowed)
    }

    /// Current trust as recorded on the chain; newcomers start at (0, 0).
    pub fn trust_state(&self, sw_id: &SwId) -> TrustState {
        match self.chain.latest_trust(sw_id) {
            Some(r) => TrustState {
                sec: r.sec,
                lek: r.lek,
                tr: r.trust_value,
            },
            None => TrustState::newcomer(self.cfg.penalty_mode),
        }
    }

    pub fn register_worker(&mut self, sw_id: SwId, mac: MacAddress) -> Result<()> {
        if self.workers.contains_key(&sw_id) {
            return Err(Error::InvalidArgument(format!(
                "worker {sw_id} already registered"
            )));
        }
        let classification = self.classification_for(TrustState::newcomer(self.cfg.penalty_mode));
        self.workers.insert(
            sw_id.clone(),
            WorkerRecord {
                sw_id,
                mac,
                conspiracy: ConspiracyState::default(),
                classification,
            },
        );
        Ok(())
    }

    fn classification_for(&self, state: TrustState) -> Classification {
        if self.cfg.scheme.has_trust_gate() {
            classify(state.tr, &self.cfg.thresholds)
        } else {
            // Without the trust mechanism nobody is ever classified; everyone
            // is served like an audited worker.
            Classification::Monitored
        }
    }

    fn append(
        &mut self,
        sw_id: &SwId,
        trust: f64,
        meta: Option<Digest>,
        leaves: Vec<LogLeaf>,
        now: Timestamp,
    ) -> Result<()> {
        let meta = meta.unwrap_or_else(|| Digest::zero(self.cfg.width));
        self.chain.append_block(sw_id, trust, meta, leaves, now)?;
        Ok(())
    }

    pub fn submit_vulnerability(
        &mut self,
        doc: VulnerabilityDocument,
        submitter: &SwId,
    ) -> Result<VulId> {
        if !self.workers.contains_key(submitter) {
            return Err(Error::UnregisteredWorker(submitter.clone()));
        }
        let vul_id = doc.meta.vul_id.clone();
        if self.vulns.contains_key(&vul_id) {
            return Err(Error::DuplicateVulnerability(vul_id));
        }
        doc.meta.validate()?;
        let digest = meta_digest(&doc.meta, self.cfg.width);
        let now = self.tick();
        let trust = self.trust_state(submitter).tr;
        self.append(
            submitter,
            trust,
            Some(digest.clone()),
            vec![LogLeaf::AccessRequest {
                sw_id: submitter.clone(),
                vul_id: vul_id.clone(),
                time: now,
            }],
            now,
        )?;
        self.vulns.insert(
            vul_id.clone(),
            VulnEntry {
                doc,
                meta_digest: digest,
                allowed: BTreeSet::new(),
                last_epoch: BTreeMap::new(),
            },
        );
        Ok(vul_id)
    }

    /// Replaces the access list. Newly listed workers receive a token
    /// (epoch 0, or one past their last epoch when re-listed); delisted
    /// workers have their live token revoked.
    pub fn set_access_list(&mut self, vul_id: &VulId, allowed: BTreeSet<SwId>) -> Result<()> {
        let entry = self
            .vulns
            .get(vul_id)
            .ok_or_else(|| Error::UnknownVulnerability(vul_id.clone()))?;
        for sw in &allowed {
            match self.workers.get(sw) {
                None => return Err(Error::UnregisteredWorker(sw.clone())),
                Some(w) if w.is_removed() => {
                    return Err(Error::InvalidArgument(format!("worker {sw} was removed")))
                }
                Some(_) => {}
            }
        }
        let previous = entry.allowed.clone();
        let meta = entry.doc.meta.clone();
        let digest = entry.meta_digest.clone();

        for sw in previous.difference(&allowed) {
            if let Some(token) = self.chain.active_token(sw, vul_id) {
                let now = self.tick();
                let trust = self.trust_state(sw).tr;
                let leaves = vec![LogLeaf::access_token(&revoke(&token))];
                self.append(sw, trust, Some(digest.clone()), leaves, now)?;
            }
        }
        for sw in allowed.difference(&previous) {
            if self.chain.active_token(sw, vul_id).is_some() {
                continue;
            }
            let epoch = match self.vulns[vul_id].last_epoch.get(sw) {
                Some(e) => e + 1,
                None => 0,
            };
            let now = self.tick();
            let nonce = random_nonce(&mut self.rng);
            let token = issue_access_token(&self.hasher, sw, &meta, now, &nonce, epoch);
            let trust = self.trust_state(sw).tr;
            self.append(
                sw,
                trust,
                Some(digest.clone()),
                vec![LogLeaf::access_token(&token)],
                now,
            )?;
            self.vulns
                .get_mut(vul_id)
                .expect("checked")
                .last_epoch
                .insert(sw.clone(), epoch);
        }
        self.vulns.get_mut(vul_id).expect("checked").allowed = allowed;
        Ok(())
    }

    pub fn handle_access_request(&mut self, req: &AccessRequest) -> Result<AccessDecision> {
        let Some(worker) = self.workers.get(&req.sw_id) else {
            return Ok(AccessDecision::Denied(DenyReason::Unregistered));
        };
        if worker.is_removed() {
            return Ok(AccessDecision::Denied(DenyReason::Removed));
        }
        let mac = worker.mac;
        let Some(entry) = self.vulns.get(&req.vul_id) else {
            return Ok(AccessDecision::Denied(DenyReason::UnknownVulnerability));
        };
        if !entry.allowed.contains(&req.sw_id) {
            return Ok(AccessDecision::Denied(DenyReason::NotOnList));
        }
        let meta = entry.doc.meta.clone();
        let digest = entry.meta_digest.clone();
        let Some(current) = self.chain.active_token(&req.sw_id, &req.vul_id) else {
            return Ok(AccessDecision::Denied(DenyReason::NoActiveToken));
        };

        let trust = self.trust_state(&req.sw_id);
        let class = self.classification_for(trust);
        self.workers
            .get_mut(&req.sw_id)
            .expect("checked")
            .classification = class;
        let request_leaf = LogLeaf::AccessRequest {
            sw_id: req.sw_id.clone(),
            vul_id: req.vul_id.clone(),
            time: req.time,
        };
        let is_false = match class {
            Classification::Dishonest | Classification::Removed => {
                let now = self.tick();
                self.append(&req.sw_id, trust.tr, Some(digest), vec![request_leaf], now)?;
                return Ok(AccessDecision::Denied(DenyReason::Untrusted));
            }
            Classification::SemiHonest => true,
            Classification::Honest | Classification::Monitored => false,
        };

        let now = self.tick();
        let nonce = random_nonce(&mut self.rng);
        let (revoked, next) = rotate_access_token(&self.hasher, &current, &meta, now, &nonce)?;
        let tracing = derive_tracing_token(&self.hasher, &revoked, mac)?;
        let (doc, valid_until) = if is_false {
            (
                self.decoy(&self.vulns[&req.vul_id].doc.clone()),
                Some(now.saturating_add(self.cfg.trap_window)),
            )
        } else {
            (self.vulns[&req.vul_id].doc.clone(), None)
        };
        let sealed =
            embed_tracing_token(doc, &tracing, self.cfg.embed_count, is_false, valid_until)?;
        let leaves = vec![
            LogLeaf::access_token(&revoked),
            LogLeaf::access_token(&next),
            LogLeaf::tracing_token(&tracing),
            LogLeaf::TrustOld {
                sec: trust.sec,
                lek: trust.lek,
            },
            LogLeaf::TrustNew {
                sec: trust.sec,
                lek: trust.lek,
            },
            request_leaf,
            LogLeaf::FalseFlag { flag: is_false },
        ];
        self.append(&req.sw_id, trust.tr, Some(digest), leaves, now)?;
        self.vulns
            .get_mut(&req.vul_id)
            .expect("checked")
            .last_epoch
            .insert(req.sw_id.clone(), next.epoch);

        let release = Release {
            sealed,
            revoked_token_value: revoked.value.clone(),
            tracing,
        };
        if is_false {
            self.traps.push(PendingTrap {
                sw_id: req.sw_id.clone(),
                vul_id: req.vul_id.clone(),
                tracing_value: release.tracing.value.clone(),
                valid_until: release.sealed.valid_until.unwrap_or(now),
                leaked: false,
            });
            Ok(AccessDecision::GrantedFalse(release))
        } else {
            self.holds
                .insert((req.sw_id.clone(), req.vul_id.clone()), HoldState::Holding);
            Ok(AccessDecision::GrantedReal(release))
        }
    }

    /// Synthetic payload with the real document's metadata and length.
    fn decoy(&mut self, real: &VulnerabilityDocument) -> VulnerabilityDocument {
        let mut payload = vec![0u8; real.payload.len()];
        self.rng.fill_bytes(&mut payload);
        VulnerabilityDocument {
            meta: real.meta.clone(),
            payload,
        }
    }

    pub fn process_feedback(&mut self, fb: &FeedbackMessage) -> Result<FeedbackOutcome> {
        let Some(record) = self
            .chain
            .lookup_by_tracing_token(&fb.tracing_value)
            .cloned()
        else {
            self.ignored_feedback += 1;
            return Ok(FeedbackOutcome::Ignored);
        };
        let sw_id = record.sw_id.clone();
        if !self.workers.contains_key(&sw_id) {
            self.ignored_feedback += 1;
            return Ok(FeedbackOutcome::Ignored);
        }
        let digest = self
            .vulns
            .get(&record.vul_id)
            .map(|v| v.meta_digest.clone());
        let before = self.trust_state(&sw_id);
        let now = self.tick().max(fb.t_feedback);
        self.advance_to(now);

        if !self.chain.is_false_release(record.block_id) {
            let mut after = register_outcome(before, Outcome::Leaked, self.cfg.penalty_mode);
            let removed = self.workers[&sw_id].is_removed();
            if removed {
                after.tr = 0.0;
            }
            let leaves = vec![
                LogLeaf::TrustOld {
                    sec: before.sec,
                    lek: before.lek,
                },
                LogLeaf::TrustNew {
                    sec: after.sec,
                    lek: after.lek,
                },
            ];
            self.append(&sw_id, after.tr, digest, leaves, now)?;
            if let Some(hold) = self.holds.get_mut(&(sw_id.clone(), record.vul_id.clone())) {
                *hold = HoldState::Leaked;
            }
            let classification = if removed {
                Classification::Removed
            } else {
                self.classification_for(after)
            };
            self.workers
                .get_mut(&sw_id)
                .expect("checked")
                .classification = classification;
            return Ok(FeedbackOutcome::LeakRecorded {
                sw_id,
                trust: after,
                classification,
            });
        }

        let worker = self.workers.get_mut(&sw_id).expect("checked");
        let new_conspirator =
            fb.mac_current != worker.mac && worker.conspiracy.observe(fb.mac_current);
        let conspiracy = worker.conspiracy.clone();
        if fb.mac_current != worker.mac {
            for trap in self
                .traps
                .iter_mut()
                .filter(|t| t.tracing_value == fb.tracing_value)
            {
                trap.leaked = true;
            }
        }
        let was_removed = worker.is_removed();
        let (after, class) = apply_conspirator_rule(before, &conspiracy, &self.cfg.thresholds);
        let removed = class == Classification::Removed;
        let mut leaves = vec![
            LogLeaf::TrustOld {
                sec: before.sec,
                lek: before.lek,
            },
            LogLeaf::TrustNew {
                sec: after.sec,
                lek: after.lek,
            },
        ];
        if removed && !was_removed {
            for (vul_id, entry) in &self.vulns {
                if entry.allowed.contains(&sw_id) {
                    if let Some(token) = self.chain.active_token(&sw_id, vul_id) {
                        leaves.push(LogLeaf::access_token(&revoke(&token)));
                    }
                }
            }
        }
        if new_conspirator || (removed && !was_removed) {
            self.append(&sw_id, after.tr, digest, leaves, now)?;
        }
        let worker = self.workers.get_mut(&sw_id).expect("checked");
        worker.classification = if removed {
            Classification::Removed
        } else {
            class
        };
        Ok(FeedbackOutcome::TrapObserved {
            sw_id,
            mu: conspiracy.mu(),
            new_conspirator,
            removed,
        })
    }

    /// Credits a secret-keeping event for a real grant that finished its
    /// cycle without leak feedback. Returns whether credit was given.
    pub fn register_keep(&mut self, sw_id: &SwId, vul_id: &VulId) -> Result<bool> {
        match self.holds.remove(&(sw_id.clone(), vul_id.clone())) {
            None => Err(Error::InvalidArgument(format!(
                "{sw_id} holds no real release of {vul_id} awaiting credit"
            ))),
            Some(HoldState::Leaked) => Ok(false),
            Some(HoldState::Holding) => self.credit_keep(sw_id, vul_id),
        }
    }

    /// Closes every trap whose window ended before now. A trap that
    /// expired without reaching a foreign host counts as a kept secret:
    /// with no conspirators the worker is provisionally treated as honest.
    /// Returns the number of workers credited.
    pub fn settle_traps(&mut self) -> Result<usize> {
        let now = self.clock;
        let (due, pending): (Vec<_>, Vec<_>) = std::mem::take(&mut self.traps)
            .into_iter()
            .partition(|t| t.valid_until < now);
        self.traps = pending;
        let mut credited = 0;
        for trap in due.into_iter().filter(|t| !t.leaked) {
            if self.credit_keep(&trap.sw_id, &trap.vul_id)? {
                credited += 1;
            }
        }
        Ok(credited)
    }

    fn credit_keep(&mut self, sw_id: &SwId, vul_id: &VulId) -> Result<bool> {
        if self
            .workers
            .get(sw_id)
            .map_or(true, WorkerRecord::is_removed)
        {
            return Ok(false);
        }
        let before = self.trust_state(sw_id);
        let after = register_outcome(before, Outcome::Kept, self.cfg.penalty_mode);
        let digest = self.vulns.get(vul_id).map(|v| v.meta_digest.clone());
        let now = self.tick();
        let leaves = vec![
            LogLeaf::TrustOld {
                sec: before.sec,
                lek: before.lek,
            },
            LogLeaf::TrustNew {
                sec: after.sec,
                lek: after.lek,
            },
        ];
        self.append(sw_id, after.tr, digest, leaves, now)?;
        let class = self.classification_for(after);
        self.workers.get_mut(sw_id).expect("checked").classification = class;
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guard::{simulate_exfiltration, GuardVerdict, HostEnvironment};
    use crate::model::VulnerabilityMeta;
    use crate::token::TokenStatus;

    fn sw(s: &str) -> SwId {
        SwId::new(s).unwrap()
    }

    fn mac(n: u8) -> MacAddress {
        MacAddress([0x02, 0, 0, 0, 0, n])
    }

    fn doc(id: &str) -> VulnerabilityDocument {
        VulnerabilityDocument::new(
            VulnerabilityMeta {
                vul_id: VulId::new(id).unwrap(),
                vendor: "acme".into(),
                device_class: "hmi".into(),
                severity: 9,
                reported_at: Timestamp(0),
            },
            b"heap overflow in firmware updater".to_vec(),
        )
        .unwrap()
    }

    fn authority(scheme: Scheme) -> (Authority, VulId) {
        let mut ta = Authority::new(AuthorityConfig {
            scheme,
            seed: 3,
            ..Default::default()
        })
        .unwrap();
        ta.register_worker(sw("reporter"), mac(200)).unwrap();
        for i in 0..3 {
            ta.register_worker(sw(&format!("w{i}")), mac(i)).unwrap();
        }
        let vul = ta.submit_vulnerability(doc("v1"), &sw("reporter")).unwrap();
        (ta, vul)
    }

    fn request(ta: &mut Authority, who: &str, vul: &VulId) -> AccessDecision {
        let req = AccessRequest {
            sw_id: sw(who),
            vul_id: vul.clone(),
            time: ta.now(),
        };
        ta.handle_access_request(&req).unwrap()
    }

    fn keep_cycles(ta: &mut Authority, who: &str, vul: &VulId, n: usize) {
        for _ in 0..n {
            assert!(matches!(
                request(ta, who, vul),
                AccessDecision::GrantedReal(_)
            ));
            assert!(ta.register_keep(&sw(who), vul).unwrap());
        }
    }

    fn access_leaf_count(ta: &Authority) -> usize {
        ta.chain()
            .leaves()
            .filter(|(_, l)| matches!(l, LogLeaf::AccessToken { .. }))
            .count()
    }

    #[test]
    fn submission_logs_meta_and_rejects_duplicates() {
        let (mut ta, vul) = authority(Scheme::UivTsp);
        assert_eq!(ta.chain().len(), 1);
        let head = &ta.chain().blocks()[0].head;
        assert_eq!(
            head.vul_meta_digest,
            meta_digest(&doc("v1").meta, DigestWidth::K256)
        );
        assert!(matches!(
            ta.submit_vulnerability(doc("v1"), &sw("reporter")),
            Err(Error::DuplicateVulnerability(_))
        ));
        assert!(matches!(
            ta.submit_vulnerability(doc("v2"), &sw("ghost")),
            Err(Error::UnregisteredWorker(_))
        ));
        let all: BTreeSet<_> = ["w0", "w1", "w2"].into_iter().map(sw).collect();
        ta.set_access_list(&vul, all).unwrap();
        assert_eq!(access_leaf_count(&ta), 3);
        assert!(ta.chain().verify().is_valid());
    }

    #[test]
    fn access_list_is_authoritative() {
        let (mut ta, vul) = authority(Scheme::UivTsp);
        ta.set_access_list(&vul, BTreeSet::new()).unwrap();
        assert_eq!(
            request(&mut ta, "w0", &vul),
            AccessDecision::Denied(DenyReason::NotOnList)
        );
        assert_eq!(
            request(&mut ta, "ghost", &vul),
            AccessDecision::Denied(DenyReason::Unregistered)
        );

        ta.set_access_list(&vul, [sw("w0")].into()).unwrap();
        assert_eq!(ta.chain().active_token(&sw("w0"), &vul).unwrap().epoch, 0);
        ta.set_access_list(&vul, BTreeSet::new()).unwrap();
        assert_eq!(ta.chain().active_token(&sw("w0"), &vul), None);
        assert_eq!(
            request(&mut ta, "w0", &vul),
            AccessDecision::Denied(DenyReason::NotOnList)
        );

        ta.set_access_list(&vul, [sw("w0")].into()).unwrap();
        let token = ta.chain().active_token(&sw("w0"), &vul).unwrap();
        assert_eq!(token.epoch, 1);
        let active: Vec<_> = ta
            .chain()
            .leaves()
            .filter_map(|(_, l)| match l {
                LogLeaf::AccessToken { epoch, status, .. } => Some((*epoch, *status)),
                _ => None,
            })
            .collect();
        assert_eq!(
            active,
            vec![
                (0, TokenStatus::Active),
                (0, TokenStatus::Revoked),
                (1, TokenStatus::Active)
            ]
        );
        assert!(ta
            .set_access_list(&VulId::new("nope").unwrap(), BTreeSet::new())
            .is_err());
        assert!(ta.set_access_list(&vul, [sw("ghost")].into()).is_err());
    }

    #[test]
    fn honest_grant_writes_one_full_block() {
        let (mut ta, vul) = authority(Scheme::UivTsp);
        ta.set_access_list(&vul, [sw("w0")].into()).unwrap();
        keep_cycles(&mut ta, "w0", &vul, 3);
        assert!(ta.trust_state(&sw("w0")).tr >= 0.8);
        let before = ta.chain().len();
        let decision = request(&mut ta, "w0", &vul);
        assert!(matches!(decision, AccessDecision::GrantedReal(_)));
        assert_eq!(ta.chain().len(), before + 1);
        let block = ta.chain().blocks().last().unwrap();
        let kinds: Vec<u8> = block.leaves.iter().map(LogLeaf::kind_byte).collect();
        assert_eq!(kinds, vec![1, 1, 2, 3, 4, 5, 6]);
        assert_eq!(
            ta.worker(&sw("w0")).unwrap().classification,
            Classification::Honest
        );
    }

    #[test]
    fn leak_lowers_trust_and_denies() {
        let (mut ta, vul) = authority(Scheme::UivTsp);
        ta.set_access_list(&vul, [sw("w0")].into()).unwrap();
        let AccessDecision::GrantedReal(release) = request(&mut ta, "w0", &vul) else {
            panic!("newcomer should get the real document");
        };
        let copy = release.licensed_copy();
        let home = HostEnvironment {
            mac: mac(0),
            now: ta.now(),
        };
        let away = HostEnvironment {
            mac: mac(99),
            now: ta.now(),
        };
        let (_, verdict) = simulate_exfiltration(ta.hasher(), &copy, &home, &away).unwrap();
        let GuardVerdict::Destroyed(fb) = verdict else {
            panic!("real doc must be destroyed")
        };
        let before = ta.trust_state(&sw("w0"));
        let outcome = ta.process_feedback(&fb).unwrap();
        let after = ta.trust_state(&sw("w0"));
        assert!(after.tr < before.tr);
        assert_eq!(after.lek, 1);
        assert!(matches!(outcome, FeedbackOutcome::LeakRecorded { .. }));
        assert!(!ta.register_keep(&sw("w0"), &vul).unwrap());
        assert_eq!(
            request(&mut ta, "w0", &vul),
            AccessDecision::Denied(DenyReason::Untrusted)
        );
    }

    #[test]
    fn semi_honest_gets_trap_and_conspirators_remove() {
        let (mut ta, vul) = authority(Scheme::UivTsp);
        ta.set_access_list(&vul, [sw("w1")].into()).unwrap();
        keep_cycles(&mut ta, "w1", &vul, 10);
        // One leak after ten clean cycles lands in the semi-honest band.
        let AccessDecision::GrantedReal(release) = request(&mut ta, "w1", &vul) else {
            panic!()
        };
        let now = ta.now();
        let (_, v) = simulate_exfiltration(
            ta.hasher(),
            &release.licensed_copy(),
            &HostEnvironment { mac: mac(1), now },
            &HostEnvironment { mac: mac(50), now },
        )
        .unwrap();
        ta.process_feedback(v.feedback().unwrap()).unwrap();
        let tr = ta.trust_state(&sw("w1")).tr;
        assert!((0.2..0.5).contains(&tr), "tr = {tr}");

        let AccessDecision::GrantedFalse(trap) = request(&mut ta, "w1", &vul) else {
            panic!("semi-honest worker should receive a trap");
        };
        assert!(trap.sealed.is_false);
        assert!(trap.sealed.valid_until.is_some());
        assert_ne!(trap.sealed.doc.payload, doc("v1").payload);
        assert_eq!(trap.sealed.doc.payload.len(), doc("v1").payload.len());

        let now = ta.now();
        let (_, v) = simulate_exfiltration(
            ta.hasher(),
            &trap.licensed_copy(),
            &HostEnvironment { mac: mac(1), now },
            &HostEnvironment { mac: mac(60), now },
        )
        .unwrap();
        let fb = v.feedback().unwrap().clone();
        let outcome = ta.process_feedback(&fb).unwrap();
        assert_eq!(
            outcome,
            FeedbackOutcome::TrapObserved {
                sw_id: sw("w1"),
                mu: 1,
                new_conspirator: true,
                removed: true
            }
        );
        assert_eq!(ta.trust_state(&sw("w1")).tr, 0.0);
        assert_eq!(ta.chain().active_token(&sw("w1"), &vul), None);
        let again = ta.process_feedback(&fb).unwrap();
        assert!(matches!(
            again,
            FeedbackOutcome::TrapObserved {
                mu: 1,
                new_conspirator: false,
                ..
            }
        ));
        assert_eq!(
            request(&mut ta, "w1", &vul),
            AccessDecision::Denied(DenyReason::Removed)
        );
        assert!(ta.set_access_list(&vul, [sw("w1")].into()).is_err());
        assert!(ta.chain().verify().is_valid());
    }

    #[test]
    fn baseline_never_gates() {
        let (mut ta, vul) = authority(Scheme::UivSp);
        ta.set_access_list(&vul, [sw("w0")].into()).unwrap();
        for _ in 0..3 {
            let AccessDecision::GrantedReal(release) = request(&mut ta, "w0", &vul) else {
                panic!("baseline always releases the real document");
            };
            let now = ta.now();
            let (_, v) = simulate_exfiltration(
                ta.hasher(),
                &release.licensed_copy(),
                &HostEnvironment { mac: mac(0), now },
                &HostEnvironment { mac: mac(77), now },
            )
            .unwrap();
            ta.process_feedback(v.feedback().unwrap()).unwrap();
        }
        assert_eq!(ta.trust_state(&sw("w0")).lek, 3);
        assert_eq!(
            ta.worker(&sw("w0")).unwrap().classification,
            Classification::Monitored
        );
    }

    #[test]
    fn unknown_feedback_is_ignored() {
        let (mut ta, _) = authority(Scheme::UivTsp);
        let fb = FeedbackMessage {
            tracing_value: Digest::zero(DigestWidth::K256),
            vul_id: VulId::new("v1").unwrap(),
            sw_id: sw("w0"),
            mac_current: mac(9),
            t_feedback: Timestamp(1),
        };
        let len = ta.chain().len();
        assert_eq!(ta.process_feedback(&fb).unwrap(), FeedbackOutcome::Ignored);
        assert_eq!(ta.chain().len(), len);
        assert_eq!(ta.ignored_feedback(), 1);
    }

    #[test]
    fn quiet_trap_earns_credit() {
        let mut ta = Authority::new(AuthorityConfig {
            thresholds: Thresholds::new(0.3, 0.6, 0.9).unwrap(),
            ..Default::default()
        })
        .unwrap();
        ta.register_worker(sw("reporter"), mac(200)).unwrap();
        ta.register_worker(sw("w0"), mac(0)).unwrap();
        ta.register_worker(sw("w1"), mac(1)).unwrap();
        let vul = ta.submit_vulnerability(doc("v1"), &sw("reporter")).unwrap();
        ta.set_access_list(&vul, [sw("w0"), sw("w1")].into())
            .unwrap();
        // Newcomers sit below the medium threshold here and get traps.
        let AccessDecision::GrantedFalse(_) = request(&mut ta, "w0", &vul) else {
            panic!()
        };
        let AccessDecision::GrantedFalse(leaked) = request(&mut ta, "w1", &vul) else {
            panic!()
        };
        let now = ta.now();
        let (_, v) = simulate_exfiltration(
            ta.hasher(),
            &leaked.licensed_copy(),
            &HostEnvironment { mac: mac(1), now },
            &HostEnvironment { mac: mac(70), now },
        )
        .unwrap();
        ta.process_feedback(v.feedback().unwrap()).unwrap();
        assert_eq!(ta.settle_traps().unwrap(), 0);
        ta.advance_to(now.saturating_add(ta.config().trap_window + 10));
        assert_eq!(ta.settle_traps().unwrap(), 1);
        assert_eq!(ta.trust_state(&sw("w0")).sec, 1);
        assert!(matches!(
            request(&mut ta, "w0", &vul),
            AccessDecision::GrantedReal(_)
        ));
        assert_eq!(
            ta.worker(&sw("w1")).unwrap().classification,
            Classification::Removed
        );
        assert_eq!(ta.settle_traps().unwrap(), 0);
    }

    #[test]
    fn keep_credit_accrues() {
        let (mut ta, vul) = authority(Scheme::UivTsp);
        ta.set_access_list(&vul, [sw("w2")].into()).unwrap();
        assert!(ta.register_keep(&sw("w2"), &vul).is_err());
        keep_cycles(&mut ta, "w2", &vul, 50);
        let s = ta.trust_state(&sw("w2"));
        assert_eq!(s.sec, 50);
        assert!((s.tr - 51.0 / 52.0).abs() < 1e-12);
    }
}
