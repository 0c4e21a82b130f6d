//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Tolerances are the constants below.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use uivtsp::authority::{AccessDecision, AuthorityConfig, Scheme};
use uivtsp::cli::run_with_args;
use uivtsp::ledger::{Chain, Verification};
use uivtsp::model::{DigestWidth, OpCounts};
use uivtsp::sim::{
    measure_tracing_delay, quartile_means, run_scenario, CycleMetrics, DelayConfig, ScenarioConfig,
};
use uivtsp::trust::{trust_value, Classification, PenaltyMode, Thresholds};

const GRID_WORKERS: usize = 200;
const GRID_CYCLES: u32 = 200;
const GRID_SEEDS: std::ops::RangeInclusive<u64> = 1..=10;
const GRID_SHARES: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];
const GRID_BUDGET: Duration = Duration::from_secs(60);
const FOCUS_SHARE: f64 = 0.3;
const TSP_SUPPRESSION: f64 = 0.5;
const SP_PERSISTENCE: f64 = 0.8;
const THRESHOLD_SEEDS: std::ops::RangeInclusive<u64> = 1..=3;
const HASHES_PER_ROUND: u64 = 3;
const HASH_ROUNDS: usize = 50;
const DELAY_EVENTS: usize = 200;
const DELAY_TOLERANCE: f64 = 0.05;
const TRUST_TOLERANCE: f64 = 1e-12;
const TRUST_GRID: u64 = 200;
const TAMPER_BLOCKS: usize = 100;

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, id: u8, pass: bool, what: &str, detail: String) {
        if !pass {
            self.failures += 1;
        }
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} {verdict}  {what}: {detail}");
    }

    fn info(&self, what: &str, detail: String) {
        println!("             info  {what}: {detail}");
    }
}

struct GridRun {
    share: f64,
    scheme: Scheme,
    detection: Option<f64>,
    false_alarm: Option<f64>,
    cycles: Vec<CycleMetrics>,
}

fn grid_config(share: f64, scheme: Scheme, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        n_workers: GRID_WORKERS,
        pct_dishonest: share,
        cycles: GRID_CYCLES,
        scheme,
        seed,
        ..Default::default()
    }
}

fn run_grid() -> (Vec<GridRun>, Duration) {
    let start = Instant::now();
    let mut runs = Vec::new();
    for share in GRID_SHARES {
        for scheme in Scheme::BOTH {
            for seed in GRID_SEEDS {
                let out = run_scenario(&grid_config(share, scheme, seed)).expect("grid run");
                runs.push(GridRun {
                    share,
                    scheme,
                    detection: out.metrics.detection_rate,
                    false_alarm: out.metrics.false_alarm_rate,
                    cycles: out.metrics.cycles,
                });
            }
        }
    }
    (runs, start.elapsed())
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn fmt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |x| format!("{x:.4}"))
}

fn by_share<F: Fn(&GridRun) -> Option<f64>>(
    runs: &[GridRun],
    f: F,
) -> BTreeMap<(u64, Scheme), Option<f64>> {
    let mut out = BTreeMap::new();
    for share in GRID_SHARES {
        for scheme in Scheme::BOTH {
            let m = mean(
                runs.iter()
                    .filter(|r| r.share == share && r.scheme == scheme)
                    .map(&f),
            );
            out.insert(((share * 100.0).round() as u64, scheme), m);
        }
    }
    out
}

fn criterion_1(report: &mut Report, runs: &[GridRun], elapsed: Duration) {
    let det = by_share(runs, |r| r.detection);
    let mut ok = true;
    let mut parts = Vec::new();
    for share in GRID_SHARES {
        let pct = (share * 100.0).round() as u64;
        let tsp = det[&(pct, Scheme::UivTsp)];
        let sp = det[&(pct, Scheme::UivSp)];
        ok &= matches!((tsp, sp), (Some(t), Some(s)) if t > s);
        parts.push(format!("{pct}% tsp {} sp {}", fmt(tsp), fmt(sp)));
    }
    let in_budget = elapsed < GRID_BUDGET;
    report.line(
        1,
        ok && in_budget,
        "detection rate uiv-tsp > uiv-sp",
        format!(
            "{}; grid of {} runs took {:.1}s (budget {}s)",
            parts.join(", "),
            runs.len(),
            elapsed.as_secs_f64(),
            GRID_BUDGET.as_secs()
        ),
    );
}

fn criterion_2(report: &mut Report, runs: &[GridRun]) {
    let fa = by_share(runs, |r| r.false_alarm);
    let tsp_max = runs
        .iter()
        .filter(|r| r.scheme == Scheme::UivTsp)
        .filter_map(|r| r.false_alarm)
        .fold(0.0f64, f64::max);
    let mut ok = tsp_max == 0.0;
    let mut parts = Vec::new();
    for share in GRID_SHARES {
        let pct = (share * 100.0).round() as u64;
        let (tsp, sp) = (fa[&(pct, Scheme::UivTsp)], fa[&(pct, Scheme::UivSp)]);
        ok &= matches!((tsp, sp), (Some(t), Some(s)) if t <= s);
        parts.push(format!("{pct}% tsp {} sp {}", fmt(tsp), fmt(sp)));
    }
    report.line(
        2,
        ok,
        "false alarm uiv-tsp <= uiv-sp and uiv-tsp = 0",
        format!("{}; max uiv-tsp {tsp_max}", parts.join(", ")),
    );
}

fn per_cycle_mean<F: Fn(&CycleMetrics) -> u64>(runs: &[&GridRun], f: F) -> (f64, f64) {
    let cycles = runs[0].cycles.len();
    let summed: Vec<u64> = (0..cycles)
        .map(|i| runs.iter().map(|r| f(&r.cycles[i])).sum())
        .collect();
    let (first, last) = quartile_means(&summed);
    let n = runs.len() as f64;
    (first / n, last / n)
}

fn criterion_3(report: &mut Report, runs: &[GridRun]) {
    let slice = |scheme| -> Vec<&GridRun> {
        runs.iter()
            .filter(|r| r.share == FOCUS_SHARE && r.scheme == scheme)
            .collect()
    };
    let (tsp, sp) = (slice(Scheme::UivTsp), slice(Scheme::UivSp));
    let (t0, t1) = per_cycle_mean(&tsp, |c| c.leaks_succeeded);
    let (s0, s1) = per_cycle_mean(&sp, |c| c.leaks_succeeded);
    let tsp_ok = t1 < TSP_SUPPRESSION * t0;
    let sp_ok = s1 >= SP_PERSISTENCE * s0;
    report.line(
        3,
        tsp_ok && sp_ok,
        "successful leaks per cycle, first vs last quartile",
        format!(
            "uiv-tsp {t0:.3} -> {t1:.3} (needs < {TSP_SUPPRESSION} x first: {}), \
             uiv-sp {s0:.3} -> {s1:.3} (needs >= {SP_PERSISTENCE} x first: {})",
            if tsp_ok { "ok" } else { "no" },
            if sp_ok { "ok" } else { "no" },
        ),
    );
    let (a0, a1) = per_cycle_mean(&tsp, |c| c.leaks_attempted);
    let (d0, d1) = per_cycle_mean(&tsp, |c| c.leaks_destroyed);
    report.info(
        "uiv-tsp leak attempts per cycle",
        format!("{a0:.3} -> {a1:.3}; destroyed by the guard {d0:.3} -> {d1:.3}"),
    );
}

fn criterion_4(report: &mut Report) {
    let triples = [
        (0.2, 0.5, 0.8),
        (0.1, 0.5, 0.8),
        (0.3, 0.5, 0.8),
        (0.2, 0.4, 0.8),
        (0.2, 0.6, 0.8),
        (0.2, 0.5, 0.7),
        (0.2, 0.5, 0.9),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (l, m, h) in triples {
        let thresholds = Thresholds::new(l, m, h).unwrap();
        let mut lp = BTreeMap::new();
        for scheme in Scheme::BOTH {
            let values = THRESHOLD_SEEDS.map(|seed| {
                let cfg = ScenarioConfig {
                    thresholds,
                    ..grid_config(FOCUS_SHARE, scheme, seed)
                };
                run_scenario(&cfg)
                    .expect("threshold run")
                    .metrics
                    .leakage_probability
            });
            lp.insert(scheme, mean(values));
        }
        let (tsp, sp) = (lp[&Scheme::UivTsp], lp[&Scheme::UivSp]);
        ok &= matches!((tsp, sp), (Some(t), Some(s)) if t < s);
        parts.push(format!("({l},{m},{h}) tsp {} sp {}", fmt(tsp), fmt(sp)));
    }
    report.line(
        4,
        ok,
        "leakage probability uiv-tsp < uiv-sp per threshold triple",
        parts.join(", "),
    );
}

fn criterion_5(report: &mut Report) {
    let mut ok = true;
    let mut parts = Vec::new();
    for width in DigestWidth::ALL {
        let (mut ta, vul) = common::authority_with(
            AuthorityConfig {
                width,
                seed: 8,
                ..Default::default()
            },
            1,
        );
        let base = ta.hasher().op_counts();
        let mut per_round = Vec::new();
        for _ in 0..HASH_ROUNDS {
            let before = ta.hasher().invocations();
            let AccessDecision::GrantedReal(release) = common::request(&mut ta, "w0", &vul) else {
                ok = false;
                break;
            };
            let mut copy = release.licensed_copy();
            copy.host = common::mac(99);
            let verdict = copy.enforce(ta.hasher(), ta.now());
            let Some(fb) = verdict.feedback() else {
                ok = false;
                break;
            };
            ok &= ta
                .chain()
                .lookup_by_tracing_token(&fb.tracing_value)
                .is_some();
            per_round.push(ta.hasher().invocations() - before);
            ta.register_keep(&common::sw("w0"), &vul).unwrap();
        }
        let ops = ta.hasher().op_counts();
        let extra = OpCounts { hash: 0, ..ops };
        ok &= per_round.len() == HASH_ROUNDS
            && per_round.iter().all(|&h| h == HASHES_PER_ROUND)
            && extra == OpCounts::default()
            && base.symmetric + base.public_key + base.exponentiation == 0;
        parts.push(format!(
            "k={} rounds {} hashes/round {:?} sym {} pk {} exp {}",
            width.bits(),
            per_round.len(),
            per_round.iter().min().zip(per_round.iter().max()),
            ops.symmetric,
            ops.public_key,
            ops.exponentiation
        ));
    }
    report.line(
        5,
        ok,
        "exactly 3 hashes and no other primitives per round",
        parts.join("; "),
    );
}

fn criterion_6(report: &mut Report) {
    let cells = measure_tracing_delay(&DelayConfig {
        events: DELAY_EVENTS,
        seed: 6,
        ..Default::default()
    })
    .expect("delay measurement");
    let median = |k: u32, e: u8| {
        cells
            .iter()
            .find(|c| c.k == k && c.epsilon == e)
            .map(|c| c.median_us)
            .unwrap()
    };
    let widths: Vec<u32> = DigestWidth::ALL.iter().map(|w| w.bits()).collect();
    let embeds = [1u8, 2, 3, 4];
    let mut violations = Vec::new();
    let mut check = |lo: (u32, u8), hi: (u32, u8)| {
        let (a, b) = (median(lo.0, lo.1), median(hi.0, hi.1));
        if b < a * (1.0 - DELAY_TOLERANCE) {
            violations.push(format!(
                "k{} e{} {a:.2}us > k{} e{} {b:.2}us",
                lo.0, lo.1, hi.0, hi.1
            ));
        }
    };
    for &k in &widths {
        for e in embeds.windows(2) {
            check((k, e[0]), (k, e[1]));
        }
    }
    for &e in &embeds {
        for k in widths.windows(2) {
            check((k[0], e), (k[1], e));
        }
    }
    let events_ok = cells.iter().all(|c| c.events >= DELAY_EVENTS);
    let table: Vec<String> = widths
        .iter()
        .map(|&k| {
            let row: Vec<String> = embeds
                .iter()
                .map(|&e| format!("{:.2}", median(k, e)))
                .collect();
            format!("k={k} [{}]", row.join(" "))
        })
        .collect();
    report.line(
        6,
        violations.is_empty() && events_ok,
        "median tracing delay non-decreasing in embed count and width (5% slack)",
        if violations.is_empty() {
            format!("medians us {}", table.join(", "))
        } else {
            format!("{}; medians us {}", violations.join(", "), table.join(", "))
        },
    );
}

fn oracle(sec: u64, lek: u64, mode: PenaltyMode) -> f64 {
    let (s, l) = (sec as f64, lek as f64);
    let base = (s + 1.0) / (s + l + 2.0);
    let factor = match (mode, sec, lek) {
        (PenaltyMode::OnLeak, _, 0) | (_, 0, 0) => 1.0,
        (_, 0, _) => 0.0,
        _ => (-1.0f64).exp() * (-l / s).exp(),
    };
    base * factor
}

fn criterion_7(report: &mut Report) {
    let mut worst = 0.0f64;
    let mut monotone = true;
    for mode in [PenaltyMode::Literal, PenaltyMode::OnLeak] {
        for sec in 0..=TRUST_GRID {
            for lek in 0..=TRUST_GRID {
                let tr = trust_value(sec, lek, mode);
                worst = worst.max((tr - oracle(sec, lek, mode)).abs());
                if lek > 0 {
                    monotone &= tr <= trust_value(sec, lek - 1, mode);
                }
                let sec_floor = if mode == PenaltyMode::Literal { 1 } else { 0 };
                if sec > sec_floor {
                    monotone &= tr >= trust_value(sec - 1, lek, mode);
                }
            }
        }
    }
    report.line(
        7,
        worst <= TRUST_TOLERANCE && monotone,
        "trust values match the reference and are monotone",
        format!(
            "max |diff| {worst:.3e} over sec,lek <= {TRUST_GRID} in both penalty modes; monotone {monotone}"
        ),
    );
}

fn criterion_8(report: &mut Report) {
    let chain = common::chain_of(TAMPER_BLOCKS);
    let suite = common::tamper_suite(&chain);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("chain.jsonl");
    chain.save(&path).unwrap();
    let reloaded = Chain::load(&path).unwrap();
    let resaved = dir.path().join("again.jsonl");
    reloaded.save(&resaved).unwrap();
    let reload_ok = reloaded.verify() == Verification::Valid
        && reloaded.blocks() == chain.blocks()
        && std::fs::read(&path).unwrap() == std::fs::read(&resaved).unwrap();
    report.line(
        8,
        suite.missed.is_empty() && reload_ok && chain.verify().is_valid(),
        "tampering detected, clean reload verifies",
        format!(
            "{}/{} single-field perturbations over {} blocks reported invalid; reload bit-exact {reload_ok}",
            suite.detected, suite.cases, suite.blocks
        ),
    );
}

fn criterion_9(report: &mut Report) {
    let out = run_scenario(&grid_config(FOCUS_SHARE, Scheme::UivTsp, 1)).expect("audit run");
    let a = &out.audit;
    let ok = a.licensed_real_checks > 0
        && a.licensed_real_destroyed == 0
        && a.offhost_real_evaluations > 0
        && a.offhost_real_destroyed_with_feedback == a.offhost_real_evaluations
        && a.feedback_resolved_to_owner == a.offhost_real_evaluations
        && a.feedback_misresolved == 0;
    report.line(
        9,
        ok,
        "guard keeps licensed copies, destroys and traces foreign ones",
        format!(
            "licensed checks {} destroyed {}; off-host {} destroyed with feedback {} resolved to owner {} misresolved {}",
            a.licensed_real_checks,
            a.licensed_real_destroyed,
            a.offhost_real_evaluations,
            a.offhost_real_destroyed_with_feedback,
            a.feedback_resolved_to_owner,
            a.feedback_misresolved
        ),
    );
}

fn criterion_10(report: &mut Report) {
    let t = common::scripted_trap();
    let ok = t.path == t.conspirators
        && t.mu == 2
        && t.classification == Classification::Removed
        && t.trust == 0.0
        && t.alive_after_expiry == 0
        && t.chain_valid;
    report.line(
        10,
        ok,
        "trap forwarded to two conspirators",
        format!(
            "path {:?} mu {} class {:?} tr {} copies alive after expiry {}/{}",
            t.path.iter().map(ToString::to_string).collect::<Vec<_>>(),
            t.mu,
            t.classification,
            t.trust,
            t.alive_after_expiry,
            t.copies_checked
        ),
    );
}

fn record_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("csv" | "jsonl")
            )
        })
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn criterion_11(report: &mut Report) {
    let runs = [
        vec![
            "run",
            "--workers",
            "200",
            "--cycles",
            "200",
            "--dishonest",
            "0.3",
            "--seed",
            "42",
        ],
        vec![
            "sweep",
            "--workers",
            "100",
            "--cycles",
            "50",
            "--dishonest",
            "0.1,0.3",
            "--replicates",
            "2",
            "--seed",
            "42",
        ],
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for argv in runs {
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for dir in &dirs {
            let mut args = vec!["uivtsp"];
            args.extend_from_slice(&argv);
            args.extend_from_slice(&["--out", dir.path().to_str().unwrap()]);
            ok &= run_with_args(args) == 0;
        }
        let (a, b) = (record_files(dirs[0].path()), record_files(dirs[1].path()));
        let same = !a.is_empty() && a == b;
        ok &= same;
        parts.push(format!("{}: {} files identical {same}", argv[0], a.len()));
    }
    report.line(
        11,
        ok,
        "same seed and config give byte-identical CSV and ledger",
        parts.join(", "),
    );
}

fn main() {
    let mut report = Report { failures: 0 };
    let (runs, elapsed) = run_grid();
    criterion_1(&mut report, &runs, elapsed);
    criterion_2(&mut report, &runs);
    criterion_3(&mut report, &runs);
    drop(runs);
    criterion_4(&mut report);
    criterion_5(&mut report);
    criterion_6(&mut report);
    criterion_7(&mut report);
    criterion_8(&mut report);
    criterion_9(&mut report);
    criterion_10(&mut report);
    criterion_11(&mut report);
    println!("acceptance: {} of 11 criteria passed", 11 - report.failures);
    if report.failures > 0 {
        std::process::exit(1);
    }
}
