//! Cycle-based multi-agent experiment harness.
//!
//! A run shares one vulnerability with a population of honest,
//! semi-honest and dishonest workers. Every cycle each non-removed worker
//! requests access, may exfiltrate what it receives to a fresh attacker
//! MAC, and the authority digests the guard feedback.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::authority::{AccessDecision, AccessRequest, Authority, AuthorityConfig, Scheme};
use crate::error::{Error, Result};
use crate::guard::{simulate_exfiltration, GuardVerdict, HostEnvironment, ProtectedCopy};
use crate::ledger::Chain;
use crate::model::{
    canonical_encode, digest, DigestWidth, MacAddress, ProtocolHasher, SwId, Timestamp, VulId,
    VulnerabilityMeta,
};
use crate::token::VulnerabilityDocument;
use crate::trust::{Classification, PenaltyMode, Thresholds};

/// Logical length of one cycle in milliseconds.
pub const CYCLE_MS: u64 = 1_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_workers: usize,
    pub pct_dishonest: f64,
    pub pct_semihonest: f64,
    pub thresholds: Thresholds,
    pub cycles: u32,
    pub embed_count: u8,
    pub width_k: DigestWidth,
    pub p_leak_dishonest: f64,
    pub p_leak_semihonest: f64,
    pub trap_window_cycles: u32,
    pub penalty_mode: PenaltyMode,
    pub scheme: Scheme,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_workers: 2000,
            pct_dishonest: 0.1,
            pct_semihonest: 0.1,
            thresholds: Thresholds::default(),
            cycles: 200,
            embed_count: 1,
            width_k: DigestWidth::K256,
            p_leak_dishonest: 0.3,
            p_leak_semihonest: 0.1,
            trap_window_cycles: 5,
            penalty_mode: PenaltyMode::OnLeak,
            scheme: Scheme::UivTsp,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        unit("pct_dishonest", self.pct_dishonest)?;
        unit("pct_semihonest", self.pct_semihonest)?;
        unit("p_leak_dishonest", self.p_leak_dishonest)?;
        unit("p_leak_semihonest", self.p_leak_semihonest)?;
        if self.pct_dishonest + self.pct_semihonest > 1.0 + 1e-12 {
            return Err(Error::Config(
                "dishonest and semi-honest shares exceed 1".into(),
            ));
        }
        if self.cycles == 0 {
            return Err(Error::Config("cycles must be at least 1".into()));
        }
        if !(1..=4).contains(&self.embed_count) {
            return Err(Error::Config(format!(
                "embed count {} outside 1..=4",
                self.embed_count
            )));
        }
        self.thresholds.validate()
    }

    fn authority_config(&self) -> AuthorityConfig {
        AuthorityConfig {
            width: self.width_k,
            thresholds: self.thresholds,
            penalty_mode: self.penalty_mode,
            embed_count: self.embed_count,
            trap_window: u64::from(self.trap_window_cycles) * CYCLE_MS,
            scheme: self.scheme,
            seed: self.seed,
        }
    }

    /// Population split `(honest, semi-honest, dishonest)`.
    pub fn population(&self) -> (usize, usize, usize) {
        let n = self.n_workers;
        let dishonest = (((n as f64) * self.pct_dishonest).round() as usize).min(n);
        let semi = (((n as f64) * self.pct_semihonest).round() as usize).min(n - dishonest);
        (n - dishonest - semi, semi, dishonest)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Archetype {
    HonestAgent,
    SemiHonestAgent,
    DishonestAgent,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BehaviorProfile {
    pub archetype: Archetype,
    pub leak_probability: f64,
}

impl BehaviorProfile {
    pub fn for_archetype(archetype: Archetype, cfg: &ScenarioConfig) -> Self {
        let leak_probability = match archetype {
            Archetype::HonestAgent => 0.0,
            Archetype::SemiHonestAgent => cfg.p_leak_semihonest,
            Archetype::DishonestAgent => cfg.p_leak_dishonest,
        };
        Self {
            archetype,
            leak_probability,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleMetrics {
    pub cycle: u32,
    pub leaks_attempted: u64,
    pub leaks_succeeded: u64,
    pub leaks_destroyed: u64,
    pub grants_real: u64,
    pub grants_false: u64,
    pub denials: u64,
    pub flagged_dishonest: u64,
    pub flagged_honest: u64,
    pub hash_invocations: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsSeries {
    pub cycles: Vec<CycleMetrics>,
    pub detection_rate: Option<f64>,
    pub false_alarm_rate: Option<f64>,
    pub leakage_probability: Option<f64>,
    pub avg_tracing_delay_us: Option<f64>,
}

impl MetricsSeries {
    pub fn total<F: Fn(&CycleMetrics) -> u64>(&self, field: F) -> u64 {
        self.cycles.iter().map(field).sum()
    }
}

/// Guard behaviour observed over a run, for soundness and completeness
/// checks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuardAudit {
    pub requests: u64,
    pub licensed_real_checks: u64,
    pub licensed_real_destroyed: u64,
    pub offhost_real_evaluations: u64,
    pub offhost_real_destroyed_with_feedback: u64,
    pub feedback_resolved_to_owner: u64,
    pub feedback_misresolved: u64,
    pub false_leaks: u64,
    pub false_copies_alive_after_expiry: u64,
    pub false_copies_destroyed: u64,
}

pub struct ScenarioOutcome {
    pub metrics: MetricsSeries,
    pub chain: Chain,
    pub audit: GuardAudit,
    pub population: Vec<(SwId, Archetype, Classification)>,
    /// Protocol hash invocations for the whole run.
    pub hash_invocations: u64,
}

struct Agent {
    id: SwId,
    mac: MacAddress,
    profile: BehaviorProfile,
}

struct LiveFalseCopy {
    copy: ProtectedCopy,
    valid_until: Timestamp,
}

pub const REPORTER_ID: &str = "reporter";
pub const VULNERABILITY_ID: &str = "uiv-0001";

fn shared_document() -> VulnerabilityDocument {
    let meta = VulnerabilityMeta {
        vul_id: VulId::new(VULNERABILITY_ID).expect("non-empty"),
        vendor: "example-automation".into(),
        device_class: "plc".into(),
        severity: 9,
        reported_at: Timestamp(0),
    };
    let payload = b"Unauthenticated write to the firmware update endpoint of the \
        controller allows arbitrary code execution; no vendor patch yet."
        .to_vec();
    VulnerabilityDocument::new(meta, payload).expect("non-empty payload")
}

pub fn worker_id(i: usize) -> SwId {
    SwId::new(format!("sw-{i:05}")).expect("non-empty")
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioOutcome> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ta = Authority::new(cfg.authority_config())?;

    let (honest, semi, dishonest) = cfg.population();
    let mut archetypes: Vec<Archetype> = std::iter::repeat(Archetype::HonestAgent)
        .take(honest)
        .chain(std::iter::repeat(Archetype::SemiHonestAgent).take(semi))
        .chain(std::iter::repeat(Archetype::DishonestAgent).take(dishonest))
        .collect();
    archetypes.shuffle(&mut rng);

    let reporter = SwId::new(REPORTER_ID).expect("non-empty");
    ta.register_worker(reporter.clone(), MacAddress::random(&mut rng))?;
    let mut agents = Vec::with_capacity(cfg.n_workers);
    for (i, archetype) in archetypes.into_iter().enumerate() {
        let agent = Agent {
            id: worker_id(i),
            mac: MacAddress::random(&mut rng),
            profile: BehaviorProfile::for_archetype(archetype, cfg),
        };
        ta.register_worker(agent.id.clone(), agent.mac)?;
        agents.push(agent);
    }
    let vul_id = ta.submit_vulnerability(shared_document(), &reporter)?;
    let listed: BTreeSet<SwId> = agents.iter().map(|a| a.id.clone()).collect();
    ta.set_access_list(&vul_id, listed)?;

    let mut metrics = MetricsSeries::default();
    let mut audit = GuardAudit::default();
    let mut live_false: Vec<LiveFalseCopy> = Vec::new();
    let mut keepers: Vec<usize> = Vec::new();

    for cycle in 0..cfg.cycles {
        ta.advance_to(Timestamp(u64::from(cycle) * CYCLE_MS));
        let hashes_before = ta.hasher().invocations();
        let mut m = CycleMetrics {
            cycle,
            ..Default::default()
        };

        sweep_false_copies(&mut ta, &mut live_false, &mut audit)?;
        ta.settle_traps()?;

        keepers.clear();
        for (idx, agent) in agents.iter().enumerate() {
            if ta.worker(&agent.id).map_or(true, |w| w.is_removed()) {
                continue;
            }
            audit.requests += 1;
            let req = AccessRequest {
                sw_id: agent.id.clone(),
                vul_id: vul_id.clone(),
                time: ta.now(),
            };
            match ta.handle_access_request(&req)? {
                AccessDecision::Denied(_) => m.denials += 1,
                AccessDecision::GrantedReal(release) => {
                    m.grants_real += 1;
                    let copy = release.licensed_copy();
                    audit.licensed_real_checks += 1;
                    if copy.enforce(ta.hasher(), ta.now()).destroys() {
                        audit.licensed_real_destroyed += 1;
                    }
                    if !rng.gen_bool(agent.profile.leak_probability) {
                        keepers.push(idx);
                        continue;
                    }
                    m.leaks_attempted += 1;
                    let (survivor, verdict) = exfiltrate(&ta, &copy, agent.mac, &mut rng)?;
                    audit.offhost_real_evaluations += 1;
                    if survivor.is_some() {
                        m.leaks_succeeded += 1;
                    } else if cfg.scheme.has_trust_gate() {
                        m.leaks_destroyed += 1;
                    } else {
                        // The baseline has no trust response, so the exposure
                        // event is counted as a leak even though the copy died.
                        m.leaks_succeeded += 1;
                    }
                    if let GuardVerdict::Destroyed(fb) = &verdict {
                        audit.offhost_real_destroyed_with_feedback += 1;
                        match ta.chain().lookup_by_tracing_token(&fb.tracing_value) {
                            Some(r) if r.sw_id == agent.id => audit.feedback_resolved_to_owner += 1,
                            _ => audit.feedback_misresolved += 1,
                        }
                        ta.process_feedback(fb)?;
                    }
                }
                AccessDecision::GrantedFalse(release) => {
                    m.grants_false += 1;
                    let copy = release.licensed_copy();
                    let valid_until = release.sealed.valid_until.unwrap_or(ta.now());
                    if rng.gen_bool(agent.profile.leak_probability) {
                        audit.false_leaks += 1;
                        let (survivor, verdict) = exfiltrate(&ta, &copy, agent.mac, &mut rng)?;
                        if let Some(fb) = verdict.feedback() {
                            let fb = fb.clone();
                            ta.process_feedback(&fb)?;
                        }
                        if let Some(copy) = survivor {
                            live_false.push(LiveFalseCopy { copy, valid_until });
                        }
                    }
                    live_false.push(LiveFalseCopy { copy, valid_until });
                }
            }
        }
        for &idx in &keepers {
            ta.register_keep(&agents[idx].id, &vul_id)?;
        }

        for agent in &agents {
            let Some(w) = ta.worker(&agent.id) else {
                continue;
            };
            if !w.classification.is_flagged() {
                continue;
            }
            match agent.profile.archetype {
                Archetype::DishonestAgent => m.flagged_dishonest += 1,
                Archetype::HonestAgent => m.flagged_honest += 1,
                Archetype::SemiHonestAgent => {}
            }
        }
        m.hash_invocations = ta.hasher().invocations() - hashes_before;
        metrics.cycles.push(m);
    }

    let population: Vec<_> = agents
        .iter()
        .map(|a| {
            let class = ta.worker(&a.id).expect("registered").classification;
            (a.id.clone(), a.profile.archetype, class)
        })
        .collect();
    let classes: Vec<_> = population.iter().map(|(_, a, c)| (*a, *c)).collect();
    let (detection, false_alarm) = compute_detection_rates(&classes);
    metrics.detection_rate = detection;
    metrics.false_alarm_rate = false_alarm;
    metrics.leakage_probability = compute_leakage_probability(&metrics.cycles);
    let hash_invocations = ta.hasher().invocations();
    Ok(ScenarioOutcome {
        metrics,
        chain: ta.into_chain(),
        audit,
        population,
        hash_invocations,
    })
}

fn exfiltrate(
    ta: &Authority,
    copy: &ProtectedCopy,
    home: MacAddress,
    rng: &mut ChaCha8Rng,
) -> Result<(Option<ProtectedCopy>, GuardVerdict)> {
    let mut attacker = MacAddress::random(rng);
    while attacker == home {
        attacker = MacAddress::random(rng);
    }
    let now = ta.now();
    simulate_exfiltration(
        ta.hasher(),
        copy,
        &HostEnvironment { mac: home, now },
        &HostEnvironment { mac: attacker, now },
    )
}

/// Re-opens every live trap copy. Foreign copies report again while the
/// window is open; all copies die once it closes.
fn sweep_false_copies(
    ta: &mut Authority,
    live: &mut Vec<LiveFalseCopy>,
    audit: &mut GuardAudit,
) -> Result<()> {
    let now = ta.now();
    let mut kept = Vec::with_capacity(live.len());
    for item in live.drain(..) {
        let verdict = item.copy.enforce(ta.hasher(), now);
        if let Some(fb) = verdict.feedback() {
            let fb = fb.clone();
            ta.process_feedback(&fb)?;
        }
        if verdict.destroys() {
            audit.false_copies_destroyed += 1;
        } else {
            if now > item.valid_until {
                audit.false_copies_alive_after_expiry += 1;
            }
            kept.push(item);
        }
    }
    *live = kept;
    Ok(())
}

/// `(detection_rate, false_alarm_rate)`: the share of dishonest and of
/// honest workers whose final classification is Dishonest or Removed.
/// A class with no members yields `None`.
pub fn compute_detection_rates(
    registry: &[(Archetype, Classification)],
) -> (Option<f64>, Option<f64>) {
    let rate = |target: Archetype| {
        let members: Vec<_> = registry.iter().filter(|(a, _)| *a == target).collect();
        if members.is_empty() {
            return None;
        }
        let flagged = members.iter().filter(|(_, c)| c.is_flagged()).count();
        Some(flagged as f64 / members.len() as f64)
    };
    (
        rate(Archetype::DishonestAgent),
        rate(Archetype::HonestAgent),
    )
}

/// Successful leaks over real grants; `None` without real grants.
pub fn compute_leakage_probability(cycles: &[CycleMetrics]) -> Option<f64> {
    let grants: u64 = cycles.iter().map(|c| c.grants_real).sum();
    if grants == 0 {
        return None;
    }
    let leaks: u64 = cycles.iter().map(|c| c.leaks_succeeded).sum();
    Some(leaks as f64 / grants as f64)
}

/// Deterministic seed for one sweep cell, independent of which other cells
/// exist.
pub fn cell_seed(base_seed: u64, axes: &[&str]) -> u64 {
    let base = base_seed.to_be_bytes();
    let mut fields: Vec<&[u8]> = vec![&base];
    fields.extend(axes.iter().map(|a| a.as_bytes()));
    let d = digest(&canonical_encode(&fields), DigestWidth::K256);
    u64::from_be_bytes(d.as_bytes()[..8].try_into().expect("32-byte digest"))
}

/// Arithmetic mean; 0 for an empty slice.
pub fn mean_of(values: &[u64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<u64>() as f64 / values.len() as f64
}

/// `(first-quartile mean, last-quartile mean)` of a per-cycle series.
pub fn quartile_means(values: &[u64]) -> (f64, f64) {
    let q = (values.len() / 4).max(1).min(values.len());
    (mean_of(&values[..q]), mean_of(&values[values.len() - q..]))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelayCell {
    pub k: u32,
    pub epsilon: u8,
    pub events: usize,
    pub mean_us: f64,
    pub median_us: f64,
    /// Protocol hashes per grant-and-trace round, counted on the first round.
    pub hashes_per_round: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DelayConfig {
    pub widths: Vec<DigestWidth>,
    pub embeds: Vec<u8>,
    pub events: usize,
    /// Repetitions averaged into one event's timing.
    pub reps: usize,
    pub seed: u64,
}

impl Default for DelayConfig {
    fn default() -> Self {
        Self {
            widths: DigestWidth::ALL.to_vec(),
            embeds: vec![1, 2, 3, 4],
            events: 200,
            reps: 32,
            seed: 0,
        }
    }
}

struct DelayFixture {
    k: u32,
    epsilon: u8,
    ta: Authority,
    leaked: Vec<(ProtectedCopy, SwId)>,
    hashes_per_round: u64,
    samples: Vec<f64>,
}

/// Times the trace path of a leaked real document: the foreign host's
/// guard extracts the tracing value (checking every embedded copy),
/// re-derives the MAC binding, emits feedback, and the authority resolves
/// the worker with one ledger lookup. Cells are measured interleaved so
/// drift in machine load spreads evenly over them.
pub fn measure_tracing_delay(cfg: &DelayConfig) -> Result<Vec<DelayCell>> {
    if cfg.events == 0 || cfg.reps == 0 || cfg.widths.is_empty() || cfg.embeds.is_empty() {
        return Err(Error::Config("empty delay grid".into()));
    }
    let mut fixtures = Vec::new();
    for &width in &cfg.widths {
        for &epsilon in &cfg.embeds {
            fixtures.push(delay_fixture(width, epsilon, cfg)?);
        }
    }
    let mut sink = 0usize;
    for event in 0..cfg.events {
        for fx in &mut fixtures {
            let (copy, owner) = &fx.leaked[event];
            let hasher = ProtocolHasher::new(fx.ta.config().width);
            let now = fx.ta.now();
            let start = Instant::now();
            for _ in 0..cfg.reps {
                if let GuardVerdict::Destroyed(fb) = copy.enforce(&hasher, now) {
                    if let Some(rec) = fx.ta.chain().lookup_by_tracing_token(&fb.tracing_value) {
                        sink += usize::from(rec.sw_id == *owner);
                    }
                }
            }
            let elapsed = start.elapsed().as_secs_f64() * 1e6 / cfg.reps as f64;
            fx.samples.push(elapsed);
        }
    }
    if sink != cfg.events * cfg.reps * fixtures.len() {
        return Err(Error::Integrity(
            "trace path failed to resolve a leaked copy".into(),
        ));
    }
    Ok(fixtures
        .into_iter()
        .map(|fx| {
            let mean = fx.samples.iter().sum::<f64>() / fx.samples.len() as f64;
            let mut sorted = fx.samples.clone();
            sorted.sort_by(f64::total_cmp);
            let mid = sorted.len() / 2;
            let median = if sorted.len() % 2 == 0 {
                (sorted[mid - 1] + sorted[mid]) / 2.0
            } else {
                sorted[mid]
            };
            DelayCell {
                k: fx.k,
                epsilon: fx.epsilon,
                events: fx.samples.len(),
                mean_us: mean,
                median_us: median,
                hashes_per_round: fx.hashes_per_round,
            }
        })
        .collect())
}

fn delay_fixture(width: DigestWidth, epsilon: u8, cfg: &DelayConfig) -> Result<DelayFixture> {
    let seed = cell_seed(cfg.seed, &[&width.bits().to_string(), &epsilon.to_string()]);
    let mut ta = Authority::new(AuthorityConfig {
        width,
        embed_count: epsilon,
        seed,
        ..AuthorityConfig::default()
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reporter = SwId::new(REPORTER_ID)?;
    ta.register_worker(reporter.clone(), MacAddress::random(&mut rng))?;
    let mut agents = Vec::with_capacity(cfg.events);
    for i in 0..cfg.events {
        let id = worker_id(i);
        let mac = MacAddress::random(&mut rng);
        ta.register_worker(id.clone(), mac)?;
        agents.push((id, mac));
    }
    let vul_id = ta.submit_vulnerability(shared_document(), &reporter)?;
    ta.set_access_list(&vul_id, agents.iter().map(|(id, _)| id.clone()).collect())?;

    let mut leaked = Vec::with_capacity(cfg.events);
    let mut hashes_per_round = 0;
    for (id, mac) in &agents {
        let before = ta.hasher().invocations();
        let req = AccessRequest {
            sw_id: id.clone(),
            vul_id: vul_id.clone(),
            time: ta.now(),
        };
        let AccessDecision::GrantedReal(release) = ta.handle_access_request(&req)? else {
            return Err(Error::Integrity(
                "newcomer was not granted the real document".into(),
            ));
        };
        let (_, verdict) = exfiltrate(&ta, &release.licensed_copy(), *mac, &mut rng)?;
        let GuardVerdict::Destroyed(fb) = verdict else {
            return Err(Error::Integrity("off-host real copy survived".into()));
        };
        let after = ta.hasher().invocations();
        if leaked.is_empty() {
            hashes_per_round = after - before;
        }
        let mut moved = release.licensed_copy();
        moved.host = fb.mac_current;
        leaked.push((moved, id.clone()));
    }
    Ok(DelayFixture {
        k: width.bits(),
        epsilon,
        ta,
        leaked,
        hashes_per_round,
        samples: Vec::with_capacity(cfg.events),
    })
}
