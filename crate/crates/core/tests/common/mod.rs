#![allow(dead_code)]

use std::collections::BTreeSet;

use serde_json::Value;
use uivtsp::authority::{
    AccessDecision, AccessRequest, Authority, AuthorityConfig, FeedbackOutcome,
};
use uivtsp::guard::{simulate_exfiltration, GuardVerdict, HostEnvironment};
use uivtsp::ledger::{Block, Chain};
use uivtsp::model::{MacAddress, SwId, Timestamp, VulId, VulnerabilityMeta};
use uivtsp::sim::{run_scenario, ScenarioConfig};
use uivtsp::token::VulnerabilityDocument;
use uivtsp::trust::Classification;

pub fn sw(s: &str) -> SwId {
    SwId::new(s).unwrap()
}

pub fn mac(n: u8) -> MacAddress {
    MacAddress([0x02, 0, 0, 0, 0, n])
}

pub fn document(id: &str) -> VulnerabilityDocument {
    VulnerabilityDocument::new(
        VulnerabilityMeta {
            vul_id: VulId::new(id).unwrap(),
            vendor: "acme".into(),
            device_class: "plc".into(),
            severity: 8,
            reported_at: Timestamp(0),
        },
        b"authentication bypass in the maintenance port".to_vec(),
    )
    .unwrap()
}

/// Authority with a reporter and `workers` listed workers `w0..`.
pub fn authority_with(cfg: AuthorityConfig, workers: u8) -> (Authority, VulId) {
    let mut ta = Authority::new(cfg).unwrap();
    ta.register_worker(sw("reporter"), mac(250)).unwrap();
    let mut list = BTreeSet::new();
    for i in 0..workers {
        let id = sw(&format!("w{i}"));
        ta.register_worker(id.clone(), mac(i)).unwrap();
        list.insert(id);
    }
    let vul = ta
        .submit_vulnerability(document("uiv-0001"), &sw("reporter"))
        .unwrap();
    ta.set_access_list(&vul, list).unwrap();
    (ta, vul)
}

pub fn request(ta: &mut Authority, who: &str, vul: &VulId) -> AccessDecision {
    let req = AccessRequest {
        sw_id: sw(who),
        vul_id: vul.clone(),
        time: ta.now(),
    };
    ta.handle_access_request(&req).unwrap()
}

/// A valid chain of exactly `n` blocks cut from a small mixed-population run.
pub fn chain_of(n: usize) -> Chain {
    let cfg = ScenarioConfig {
        n_workers: 12,
        pct_dishonest: 0.3,
        pct_semihonest: 0.2,
        cycles: 40,
        seed: 11,
        ..Default::default()
    };
    let chain = run_scenario(&cfg).unwrap().chain;
    assert!(chain.len() >= n, "run produced only {} blocks", chain.len());
    let blocks: Vec<Block> = chain.blocks()[..n].to_vec();
    Chain::from_blocks(chain.width(), blocks)
}

fn flip_hex(s: &str, at_end: bool) -> String {
    let mut chars: Vec<char> = s.chars().collect();
    let i = if at_end { chars.len() - 1 } else { 0 };
    chars[i] = if chars[i] == '0' { '1' } else { '0' };
    chars.into_iter().collect()
}

fn perturb(key: &str, v: &Value) -> Option<Value> {
    Some(match v {
        Value::Bool(b) => Value::Bool(!b),
        Value::Number(n) if n.is_u64() => Value::from(n.as_u64()? + 1),
        Value::Number(n) => {
            let x = n.as_f64()?;
            Value::from(if x < 0.5 { x + 0.125 } else { x - 0.125 })
        }
        Value::String(s) => Value::String(match key {
            "status" if s == "Active" => "Revoked".into(),
            "status" => "Active".into(),
            "bound_mac" => flip_hex(s, true),
            "sw_id" | "vul_id" => format!("{s}x"),
            _ => flip_hex(s, false),
        }),
        Value::Null if key == "vul_meta_digest" => Value::String("0".repeat(64)),
        _ => return None,
    })
}

fn collect(v: &Value, path: &mut Vec<String>, out: &mut Vec<Vec<String>>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                if k == "kind" {
                    continue;
                }
                path.push(k.clone());
                collect(child, path, out);
                path.pop();
            }
        }
        Value::Array(items) => {
            for (i, child) in items.iter().enumerate() {
                path.push(i.to_string());
                collect(child, path, out);
                path.pop();
            }
        }
        _ => out.push(path.clone()),
    }
}

fn pointer(path: &[String]) -> String {
    path.iter().map(|p| format!("/{p}")).collect()
}

/// Every single-field perturbation of one serialized block, as
/// `(json pointer, tampered block)`. The leaf `kind` tag is structural and
/// left alone.
pub fn single_field_tampers(block: &Block) -> Vec<(String, Block)> {
    let original = serde_json::to_value(block).unwrap();
    let mut paths = Vec::new();
    collect(&original, &mut Vec::new(), &mut paths);
    let mut out = Vec::new();
    for path in paths {
        let ptr = pointer(&path);
        let key = path.last().map(String::as_str).unwrap_or("");
        let mut tampered = original.clone();
        let slot = tampered.pointer_mut(&ptr).unwrap();
        let Some(new) = perturb(key, slot) else {
            panic!("no perturbation for {ptr}");
        };
        *slot = new;
        let block: Block = serde_json::from_value(tampered)
            .unwrap_or_else(|e| panic!("tampered {ptr} does not parse: {e}"));
        out.push((ptr, block));
    }
    out
}

pub struct TamperReport {
    pub blocks: usize,
    pub cases: usize,
    pub detected: usize,
    pub missed: Vec<String>,
}

pub fn tamper_suite(chain: &Chain) -> TamperReport {
    let blocks = chain.blocks();
    let mut report = TamperReport {
        blocks: blocks.len(),
        cases: 0,
        detected: 0,
        missed: Vec::new(),
    };
    for (i, block) in blocks.iter().enumerate() {
        for (ptr, tampered) in single_field_tampers(block) {
            let mut copy = blocks.to_vec();
            copy[i] = tampered;
            report.cases += 1;
            if Chain::from_blocks(chain.width(), copy).verify().is_valid() {
                report.missed.push(format!("block {i} {ptr}"));
            } else {
                report.detected += 1;
            }
        }
    }
    report
}

pub struct TrapReport {
    pub conspirators: Vec<MacAddress>,
    pub path: Vec<MacAddress>,
    pub mu: usize,
    pub classification: Classification,
    pub trust: f64,
    pub outcomes: Vec<FeedbackOutcome>,
    pub alive_after_expiry: usize,
    pub copies_checked: usize,
    pub chain_valid: bool,
}

/// A semi-honest worker receives a trap and forwards it along two
/// conspirator hosts before it expires.
pub fn scripted_trap() -> TrapReport {
    let (mut ta, vul) = authority_with(
        AuthorityConfig {
            seed: 21,
            ..Default::default()
        },
        1,
    );
    let home = mac(0);
    let conspirators = vec![mac(60), mac(61)];

    for _ in 0..10 {
        assert!(matches!(
            request(&mut ta, "w0", &vul),
            AccessDecision::GrantedReal(_)
        ));
        assert!(ta.register_keep(&sw("w0"), &vul).unwrap());
    }
    let AccessDecision::GrantedReal(real) = request(&mut ta, "w0", &vul) else {
        panic!("trusted worker should get the real document");
    };
    let now = ta.now();
    let (_, verdict) = simulate_exfiltration(
        ta.hasher(),
        &real.licensed_copy(),
        &HostEnvironment { mac: home, now },
        &HostEnvironment { mac: mac(90), now },
    )
    .unwrap();
    ta.process_feedback(verdict.feedback().unwrap()).unwrap();
    assert_eq!(
        ta.worker(&sw("w0")).unwrap().classification,
        Classification::SemiHonest
    );

    let AccessDecision::GrantedFalse(trap) = request(&mut ta, "w0", &vul) else {
        panic!("semi-honest worker should get a trap");
    };
    let valid_until = trap.sealed.valid_until.expect("trap carries a valid time");

    let mut copies = vec![trap.licensed_copy()];
    let mut outcomes = Vec::new();
    let mut from = HostEnvironment {
        mac: home,
        now: ta.now(),
    };
    for &hop in &conspirators {
        let now = ta.now();
        assert!(now <= valid_until);
        let to = HostEnvironment { mac: hop, now };
        let source = copies.last().unwrap().clone();
        let (survivor, verdict) =
            simulate_exfiltration(ta.hasher(), &source, &HostEnvironment { now, ..from }, &to)
                .unwrap();
        let GuardVerdict::FalseDocObserved(fb) = verdict else {
            panic!("live trap should report and survive, got {verdict:?}");
        };
        outcomes.push(ta.process_feedback(&fb).unwrap());
        copies.push(survivor.expect("trap survives until expiry"));
        from = to;
    }

    let after = Timestamp(valid_until.millis() + 1);
    let alive_after_expiry = copies
        .iter()
        .filter(|c| !c.enforce(ta.hasher(), after).destroys())
        .count();
    let record = ta.worker(&sw("w0")).unwrap();
    TrapReport {
        conspirators,
        path: record.conspiracy.path().to_vec(),
        mu: record.conspiracy.mu(),
        classification: record.classification,
        trust: ta.trust_state(&sw("w0")).tr,
        outcomes,
        alive_after_expiry,
        copies_checked: copies.len(),
        chain_valid: ta.chain().verify().is_valid(),
    }
}
