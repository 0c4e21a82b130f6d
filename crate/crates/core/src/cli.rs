//! Command-line front end: single runs, parameter sweeps, the tracing
//! delay table, and ledger verification.
//!
//! Exit codes: 0 success, 1 runtime failure or an invalid ledger, 2 usage,
//! configuration or ledger parse errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::authority::Scheme;
use crate::error::{Error, Result};
use crate::ledger::{Chain, Verification};
use crate::model::DigestWidth;
use crate::plot::{line_chart, Series};
use crate::sim::{
    cell_seed, measure_tracing_delay, run_scenario, CycleMetrics, DelayCell, DelayConfig,
    MetricsSeries, ScenarioConfig,
};
use crate::trust::{PenaltyMode, Thresholds};

#[derive(Parser, Debug)]
#[command(
    name = "uivtsp",
    version,
    about = "Trust-aware vulnerability sharing simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run one scenario per selected scheme.
    Run(RunArgs),
    /// Run a grid of scenarios with per-cell seeds.
    Sweep(SweepArgs),
    /// Measure tracing delay over digest widths and embed counts.
    Delay(DelayArgs),
    /// Ledger inspection.
    #[command(subcommand)]
    Ledger(LedgerCommand),
}

#[derive(Subcommand, Debug)]
pub enum LedgerCommand {
    /// Verify a JSON Lines chain. Exit 0 valid, 1 invalid, 2 unreadable.
    Verify { path: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeChoice {
    UivTsp,
    UivSp,
    Both,
}

impl SchemeChoice {
    pub fn schemes(self) -> Vec<Scheme> {
        match self {
            SchemeChoice::UivTsp => vec![Scheme::UivTsp],
            SchemeChoice::UivSp => vec![Scheme::UivSp],
            SchemeChoice::Both => Scheme::BOTH.to_vec(),
        }
    }
}

#[derive(Args, Debug, Default)]
pub struct CommonArgs {
    /// JSON file with the same keys as the flags; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub semihonest: Option<f64>,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub cycles: Option<u32>,
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeChoice>,
    #[arg(long, value_parser = parse_penalty)]
    pub penalty: Option<PenaltyMode>,
    /// Trap document lifetime in cycles.
    #[arg(long)]
    pub trap_window: Option<u32>,
    #[arg(long)]
    pub p_leak_dishonest: Option<f64>,
    #[arg(long)]
    pub p_leak_semihonest: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite existing output files.
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub dishonest: Option<f64>,
    /// `l,m,h`.
    #[arg(long, value_parser = parse_thresholds)]
    pub thresholds: Option<Thresholds>,
    #[arg(long, value_parser = parse_width)]
    pub k: Option<DigestWidth>,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    pub embed: Option<u8>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated dishonest shares.
    #[arg(long, value_delimiter = ',')]
    pub dishonest: Vec<f64>,
    /// One `l,m,h` triple per occurrence.
    #[arg(long, value_parser = parse_thresholds)]
    pub thresholds: Vec<Thresholds>,
    #[arg(long, value_delimiter = ',', value_parser = parse_width)]
    pub k: Vec<DigestWidth>,
    #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u8).range(1..=4))]
    pub embed: Vec<u8>,
    /// Seeds per cell; rates are averaged over them.
    #[arg(long)]
    pub replicates: Option<u32>,
}

#[derive(Args, Debug)]
pub struct DelayArgs {
    #[arg(long, value_delimiter = ',', value_parser = parse_width, default_values = ["256", "512", "1024"])]
    pub k: Vec<DigestWidth>,
    #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u8).range(1..=4), default_values = ["1", "2", "3", "4"])]
    pub embed: Vec<u8>,
    #[arg(long, default_value_t = 200)]
    pub events: usize,
    #[arg(long, default_value_t = 32)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

fn parse_thresholds(s: &str) -> std::result::Result<Thresholds, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_penalty(s: &str) -> std::result::Result<PenaltyMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_width(s: &str) -> std::result::Result<DigestWidth, String> {
    let bits: u32 = s
        .trim()
        .parse()
        .map_err(|_| format!("bad digest width {s:?}"))?;
    DigestWidth::from_bits(bits).map_err(|e| e.to_string())
}

/// A config-file value that may be a scalar or a list.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    fn into_vec(self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v],
            OneOrMany::Many(v) => v,
        }
    }
}

/// Config file schema; keys mirror the long flags with `_` for `-`.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub workers: Option<usize>,
    pub dishonest: Option<OneOrMany<f64>>,
    pub semihonest: Option<f64>,
    pub cycles: Option<u32>,
    pub thresholds: Option<OneOrMany<String>>,
    pub k: Option<OneOrMany<u32>>,
    pub embed: Option<OneOrMany<u8>>,
    pub scheme: Option<SchemeChoice>,
    pub penalty: Option<PenaltyMode>,
    pub trap_window: Option<u32>,
    pub p_leak_dishonest: Option<f64>,
    pub p_leak_semihonest: Option<f64>,
    pub seed: Option<u64>,
    pub replicates: Option<u32>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Axis values of one sweep cell (or one run).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CellKey {
    pub scheme: Scheme,
    pub pct_dishonest: f64,
    pub thresholds: Thresholds,
    pub k: DigestWidth,
    pub epsilon: u8,
}

impl CellKey {
    fn axes(&self) -> [String; 5] {
        [
            self.scheme.to_string(),
            self.pct_dishonest.to_string(),
            self.thresholds.to_string(),
            self.k.bits().to_string(),
            self.epsilon.to_string(),
        ]
    }
}

/// One row of `summary.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scheme: Scheme,
    pub pct_dishonest: f64,
    pub delta_l: f64,
    pub delta_m: f64,
    pub delta_h: f64,
    pub k: u32,
    pub epsilon: u8,
    pub detection_rate: Option<f64>,
    pub false_alarm_rate: Option<f64>,
    pub leakage_probability: Option<f64>,
    pub avg_tracing_delay_us: Option<f64>,
}

impl SummaryRow {
    fn new(key: &CellKey, m: &MetricsSeries) -> Self {
        Self {
            scheme: key.scheme,
            pct_dishonest: key.pct_dishonest,
            delta_l: key.thresholds.delta_l,
            delta_m: key.thresholds.delta_m,
            delta_h: key.thresholds.delta_h,
            k: key.k.bits(),
            epsilon: key.epsilon,
            detection_rate: m.detection_rate,
            false_alarm_rate: m.false_alarm_rate,
            leakage_probability: m.leakage_probability,
            avg_tracing_delay_us: m.avg_tracing_delay_us,
        }
    }
}

/// Per-cycle row of a sweep's `cycles.csv`: the cell key, the replicate,
/// then the per-cycle columns.
#[derive(Serialize)]
struct SweepCycleRow {
    scheme: Scheme,
    pct_dishonest: f64,
    delta_l: f64,
    delta_m: f64,
    delta_h: f64,
    k: u32,
    epsilon: u8,
    replicate: u32,
    cycle: u32,
    leaks_attempted: u64,
    leaks_succeeded: u64,
    leaks_destroyed: u64,
    grants_real: u64,
    grants_false: u64,
    denials: u64,
    flagged_dishonest: u64,
    flagged_honest: u64,
    hash_invocations: u64,
}

#[derive(Serialize)]
pub struct RunManifest<'a, C: Serialize> {
    pub command: &'a str,
    pub version: &'a str,
    pub config: &'a C,
    pub seed: u64,
    pub started_at_unix: u64,
    pub finished_at_unix: Option<u64>,
    pub outputs: &'a [String],
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

struct Output {
    dir: PathBuf,
    files: Vec<String>,
}

impl Output {
    /// Creates `dir` and refuses to clobber any of `files` unless forced.
    fn prepare(dir: &Path, files: Vec<String>, force: bool) -> Result<Self> {
        fs::create_dir_all(dir)?;
        if !force {
            for f in &files {
                if dir.join(f).exists() {
                    return Err(Error::Config(format!(
                        "{} already exists; pass --force to overwrite",
                        dir.join(f).display()
                    )));
                }
            }
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            files,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn manifest<C: Serialize>(
        &self,
        command: &str,
        config: &C,
        seed: u64,
        started: u64,
        finished: Option<u64>,
    ) -> Result<()> {
        let manifest = RunManifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config,
            seed,
            started_at_unix: started,
            finished_at_unix: finished,
            outputs: &self.files,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(self.path("manifest.json"), text)?;
        Ok(())
    }
}

pub fn write_cycles_csv(path: &Path, cycles: &[CycleMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for c in cycles {
        w.serialize(c)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

pub fn read_cycles_csv(path: &Path) -> Result<Vec<CycleMetrics>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

pub fn write_delay_csv(path: &Path, cells: &[DelayCell]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for c in cells {
        w.serialize(c)?;
    }
    w.flush()?;
    Ok(())
}

/// Base scenario from the config file and the shared flags.
fn base_config(common: &CommonArgs, file: &FileConfig) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::default();
    if let Some(v) = common.workers.or(file.workers) {
        cfg.n_workers = v;
    }
    if let Some(v) = common.semihonest.or(file.semihonest) {
        cfg.pct_semihonest = v;
    }
    if let Some(v) = common.cycles.or(file.cycles) {
        cfg.cycles = v;
    }
    if let Some(v) = common.penalty.or(file.penalty) {
        cfg.penalty_mode = v;
    }
    if let Some(v) = common.trap_window.or(file.trap_window) {
        cfg.trap_window_cycles = v;
    }
    if let Some(v) = common.p_leak_dishonest.or(file.p_leak_dishonest) {
        cfg.p_leak_dishonest = v;
    }
    if let Some(v) = common.p_leak_semihonest.or(file.p_leak_semihonest) {
        cfg.p_leak_semihonest = v;
    }
    if let Some(v) = common.seed.or(file.seed) {
        cfg.seed = v;
    }
    cfg
}

fn file_config(common: &CommonArgs) -> Result<FileConfig> {
    match &common.config {
        Some(path) => FileConfig::load(path),
        None => Ok(FileConfig::default()),
    }
}

fn file_thresholds(file: &FileConfig) -> Result<Vec<Thresholds>> {
    file.thresholds
        .clone()
        .map(OneOrMany::into_vec)
        .unwrap_or_default()
        .iter()
        .map(|s| s.parse())
        .collect()
}

fn file_widths(file: &FileConfig) -> Result<Vec<DigestWidth>> {
    file.k
        .clone()
        .map(OneOrMany::into_vec)
        .unwrap_or_default()
        .into_iter()
        .map(DigestWidth::from_bits)
        .collect()
}

fn first_or<T: Copy>(flag: Option<T>, file: Option<Vec<T>>, default: T) -> Result<T> {
    if let Some(v) = flag {
        return Ok(v);
    }
    match file.as_deref() {
        None | Some([]) => Ok(default),
        Some([v]) => Ok(*v),
        Some(_) => Err(Error::Config(
            "`run` takes a single value per axis; use `sweep`".into(),
        )),
    }
}

pub fn cmd_run(args: &RunArgs) -> Result<()> {
    let file = file_config(&args.common)?;
    let mut cfg = base_config(&args.common, &file);
    cfg.pct_dishonest = first_or(
        args.dishonest,
        file.dishonest.clone().map(OneOrMany::into_vec),
        0.3,
    )?;
    cfg.thresholds = first_or(
        args.thresholds,
        Some(file_thresholds(&file)?),
        cfg.thresholds,
    )?;
    cfg.width_k = first_or(args.k, Some(file_widths(&file)?), cfg.width_k)?;
    cfg.embed_count = first_or(
        args.embed,
        file.embed.clone().map(OneOrMany::into_vec),
        cfg.embed_count,
    )?;
    let schemes = args
        .common
        .scheme
        .or(file.scheme)
        .unwrap_or(SchemeChoice::Both)
        .schemes();
    cfg.validate()?;

    let mut files = vec!["manifest.json".to_string(), "summary.csv".to_string()];
    for s in &schemes {
        files.push(format!("cycles_{s}.csv"));
        files.push(format!("ledger_{s}.jsonl"));
    }
    files.extend(PLOTS.iter().map(|p| p.to_string()));
    let out = Output::prepare(&args.common.out, files, args.common.force)?;
    let started = unix_now();
    out.manifest("run", &cfg, cfg.seed, started, None)?;

    let mut rows = Vec::new();
    let mut per_scheme = Vec::new();
    for &scheme in &schemes {
        let run_cfg = ScenarioConfig {
            scheme,
            ..cfg.clone()
        };
        let outcome = run_scenario(&run_cfg)?;
        write_cycles_csv(
            &out.path(&format!("cycles_{scheme}.csv")),
            &outcome.metrics.cycles,
        )?;
        outcome
            .chain
            .save(&out.path(&format!("ledger_{scheme}.jsonl")))?;
        let key = CellKey {
            scheme,
            pct_dishonest: cfg.pct_dishonest,
            thresholds: cfg.thresholds,
            k: cfg.width_k,
            epsilon: cfg.embed_count,
        };
        rows.push(SummaryRow::new(&key, &outcome.metrics));
        per_scheme.push((scheme, outcome.metrics.cycles));
    }
    write_summary_csv(&out.path("summary.csv"), &rows)?;
    render_plots(&out, &rows, &per_scheme)?;
    out.manifest("run", &cfg, cfg.seed, started, Some(unix_now()))?;
    Ok(())
}

#[derive(Serialize)]
struct SweepSpec {
    base: ScenarioConfig,
    schemes: Vec<Scheme>,
    dishonest: Vec<f64>,
    thresholds: Vec<Thresholds>,
    k: Vec<u32>,
    embed: Vec<u8>,
    replicates: u32,
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let file = file_config(&args.common)?;
    let base = base_config(&args.common, &file);
    let pick = |flag: &Vec<f64>, file: Option<Vec<f64>>, default: Vec<f64>| {
        if !flag.is_empty() {
            flag.clone()
        } else {
            file.unwrap_or(default)
        }
    };
    let dishonest = pick(
        &args.dishonest,
        file.dishonest.clone().map(OneOrMany::into_vec),
        vec![0.1, 0.2, 0.3, 0.4, 0.5],
    );
    let mut thresholds = args.thresholds.clone();
    if thresholds.is_empty() {
        thresholds = file_thresholds(&file)?;
    }
    if thresholds.is_empty() {
        thresholds = vec![Thresholds::default()];
    }
    let mut widths = args.k.clone();
    if widths.is_empty() {
        widths = file_widths(&file)?;
    }
    if widths.is_empty() {
        widths = vec![DigestWidth::K256];
    }
    let mut embeds = args.embed.clone();
    if embeds.is_empty() {
        embeds = file
            .embed
            .clone()
            .map(OneOrMany::into_vec)
            .unwrap_or_else(|| vec![1]);
    }
    let replicates = args.replicates.or(file.replicates).unwrap_or(1);
    let schemes = args
        .common
        .scheme
        .or(file.scheme)
        .unwrap_or(SchemeChoice::Both)
        .schemes();
    if dishonest.is_empty() || replicates == 0 {
        return Err(Error::Config("empty sweep grid".into()));
    }

    let mut cells = Vec::new();
    for &scheme in &schemes {
        for &pct_dishonest in &dishonest {
            for &t in &thresholds {
                for &k in &widths {
                    for &epsilon in &embeds {
                        let key = CellKey {
                            scheme,
                            pct_dishonest,
                            thresholds: t,
                            k,
                            epsilon,
                        };
                        let cfg = ScenarioConfig {
                            scheme,
                            pct_dishonest,
                            thresholds: t,
                            width_k: k,
                            embed_count: epsilon,
                            ..base.clone()
                        };
                        cfg.validate()?;
                        cells.push((key, cfg));
                    }
                }
            }
        }
    }

    let spec = SweepSpec {
        base: base.clone(),
        schemes: schemes.clone(),
        dishonest: dishonest.clone(),
        thresholds: thresholds.clone(),
        k: widths.iter().map(|w| w.bits()).collect(),
        embed: embeds.clone(),
        replicates,
    };
    let mut files = vec![
        "manifest.json".into(),
        "summary.csv".into(),
        "cycles.csv".into(),
    ];
    files.extend(PLOTS.iter().map(|p| p.to_string()));
    let out = Output::prepare(&args.common.out, files, args.common.force)?;
    let started = unix_now();
    out.manifest("sweep", &spec, base.seed, started, None)?;

    let mut rows = Vec::new();
    let mut cycle_writer = csv::Writer::from_path(out.path("cycles.csv"))?;
    let mut per_scheme: BTreeMap<Scheme, Vec<Vec<CycleMetrics>>> = BTreeMap::new();
    for (key, cfg) in &cells {
        let mut series = Vec::new();
        for rep in 0..replicates {
            let axes = key.axes();
            let mut axis_refs: Vec<&str> = axes.iter().map(String::as_str).collect();
            let rep_s = rep.to_string();
            axis_refs.push(&rep_s);
            let seed = cell_seed(base.seed, &axis_refs);
            let outcome = run_scenario(&ScenarioConfig {
                seed,
                ..cfg.clone()
            })?;
            for c in &outcome.metrics.cycles {
                cycle_writer.serialize(SweepCycleRow {
                    scheme: key.scheme,
                    pct_dishonest: key.pct_dishonest,
                    delta_l: key.thresholds.delta_l,
                    delta_m: key.thresholds.delta_m,
                    delta_h: key.thresholds.delta_h,
                    k: key.k.bits(),
                    epsilon: key.epsilon,
                    replicate: rep,
                    cycle: c.cycle,
                    leaks_attempted: c.leaks_attempted,
                    leaks_succeeded: c.leaks_succeeded,
                    leaks_destroyed: c.leaks_destroyed,
                    grants_real: c.grants_real,
                    grants_false: c.grants_false,
                    denials: c.denials,
                    flagged_dishonest: c.flagged_dishonest,
                    flagged_honest: c.flagged_honest,
                    hash_invocations: c.hash_invocations,
                })?;
            }
            per_scheme
                .entry(key.scheme)
                .or_default()
                .push(outcome.metrics.cycles.clone());
            series.push(outcome.metrics);
        }
        rows.push(SummaryRow {
            detection_rate: mean_option(series.iter().map(|m| m.detection_rate)),
            false_alarm_rate: mean_option(series.iter().map(|m| m.false_alarm_rate)),
            leakage_probability: mean_option(series.iter().map(|m| m.leakage_probability)),
            ..SummaryRow::new(key, &MetricsSeries::default())
        });
    }
    cycle_writer.flush()?;
    write_summary_csv(&out.path("summary.csv"), &rows)?;
    let mean_cycles: Vec<(Scheme, Vec<CycleMetrics>)> = per_scheme
        .into_iter()
        .map(|(s, runs)| (s, mean_cycle_counts(&runs)))
        .collect();
    render_plots(&out, &rows, &mean_cycles)?;
    out.manifest("sweep", &spec, base.seed, started, Some(unix_now()))?;
    Ok(())
}

/// Mean of the present values; `None` if none are present.
pub fn mean_option(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let present: Vec<f64> = values.flatten().collect();
    if present.is_empty() {
        None
    } else {
        Some(present.iter().sum::<f64>() / present.len() as f64)
    }
}

/// Per-cycle leak counts averaged over runs, rounded down; only used for
/// plotting.
fn mean_cycle_counts(runs: &[Vec<CycleMetrics>]) -> Vec<CycleMetrics> {
    let len = runs.iter().map(Vec::len).min().unwrap_or(0);
    let n = runs.len().max(1) as u64;
    (0..len)
        .map(|i| {
            let sum = |f: fn(&CycleMetrics) -> u64| runs.iter().map(|r| f(&r[i])).sum::<u64>() / n;
            CycleMetrics {
                cycle: i as u32,
                leaks_attempted: sum(|c| c.leaks_attempted),
                leaks_succeeded: sum(|c| c.leaks_succeeded),
                leaks_destroyed: sum(|c| c.leaks_destroyed),
                ..CycleMetrics::default()
            }
        })
        .collect()
}

const PLOTS: [&str; 4] = [
    "detection.svg",
    "false_alarm.svg",
    "suppression.svg",
    "leak_probability.svg",
];

fn render_plots(
    out: &Output,
    rows: &[SummaryRow],
    cycles: &[(Scheme, Vec<CycleMetrics>)],
) -> Result<()> {
    let by_scheme = |metric: fn(&SummaryRow) -> Option<f64>, x: fn(&SummaryRow, usize) -> f64| {
        Scheme::BOTH
            .iter()
            .map(|&s| {
                let mut acc: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
                for (i, r) in rows.iter().enumerate().filter(|(_, r)| r.scheme == s) {
                    if let Some(v) = metric(r) {
                        acc.entry((x(r, i) * 1e6).round() as i64)
                            .or_default()
                            .push(v);
                    }
                }
                Series {
                    label: s.to_string(),
                    points: acc
                        .into_iter()
                        .map(|(x, v)| (x as f64 / 1e6, v.iter().sum::<f64>() / v.len() as f64))
                        .collect(),
                }
            })
            .collect::<Vec<_>>()
    };
    let pct = |r: &SummaryRow, _| r.pct_dishonest * 100.0;
    line_chart(
        &out.path("detection.svg"),
        "Detection rate",
        "dishonest workers (%)",
        "detection rate",
        &by_scheme(|r| r.detection_rate, pct),
    )?;
    line_chart(
        &out.path("false_alarm.svg"),
        "False alarm rate",
        "dishonest workers (%)",
        "false alarm rate",
        &by_scheme(|r| r.false_alarm_rate, pct),
    )?;
    line_chart(
        &out.path("leak_probability.svg"),
        "Leakage probability by threshold triple",
        "delta_l",
        "leakage probability",
        &by_scheme(|r| r.leakage_probability, |r, _| r.delta_l),
    )?;
    let suppression: Vec<Series> = cycles
        .iter()
        .map(|(s, c)| Series {
            label: format!("{s} leaks succeeded"),
            points: c
                .iter()
                .map(|m| (f64::from(m.cycle), m.leaks_succeeded as f64))
                .collect(),
        })
        .chain(cycles.iter().map(|(s, c)| {
            Series {
                label: format!("{s} leaks attempted"),
                points: c
                    .iter()
                    .map(|m| (f64::from(m.cycle), m.leaks_attempted as f64))
                    .collect(),
            }
        }))
        .collect();
    line_chart(
        &out.path("suppression.svg"),
        "Leaks per cycle",
        "cycle",
        "leaks",
        &suppression,
    )
}

pub fn cmd_delay(args: &DelayArgs) -> Result<Vec<DelayCell>> {
    let cfg = DelayConfig {
        widths: args.k.clone(),
        embeds: args.embed.clone(),
        events: args.events,
        reps: args.reps,
        seed: args.seed,
    };
    #[derive(Serialize)]
    struct DelaySpec {
        k: Vec<u32>,
        embed: Vec<u8>,
        events: usize,
        reps: usize,
    }
    let spec = DelaySpec {
        k: cfg.widths.iter().map(|w| w.bits()).collect(),
        embed: cfg.embeds.clone(),
        events: cfg.events,
        reps: cfg.reps,
    };
    let files = vec![
        "manifest.json".into(),
        "delay.csv".into(),
        "tracing_delay.svg".into(),
    ];
    let out = Output::prepare(&args.out, files, args.force)?;
    let started = unix_now();
    out.manifest("delay", &spec, cfg.seed, started, None)?;
    let cells = measure_tracing_delay(&cfg)?;
    write_delay_csv(&out.path("delay.csv"), &cells)?;
    let series: Vec<Series> = cfg
        .widths
        .iter()
        .map(|w| Series {
            label: format!("k={}", w.bits()),
            points: cells
                .iter()
                .filter(|c| c.k == w.bits())
                .map(|c| (f64::from(c.epsilon), c.median_us))
                .collect(),
        })
        .collect();
    line_chart(
        &out.path("tracing_delay.svg"),
        "Tracing delay",
        "embedded copies",
        "median delay (us)",
        &series,
    )?;
    out.manifest("delay", &spec, cfg.seed, started, Some(unix_now()))?;
    Ok(cells)
}

/// Verifies a ledger file, printing the verdict. Returns the exit code.
pub fn cmd_ledger_verify(path: &Path) -> u8 {
    match Chain::load(path) {
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            2
        }
        Ok(chain) => match chain.verify() {
            Verification::Valid => {
                println!("Valid ({} blocks)", chain.len());
                0
            }
            Verification::Invalid { height, reason } => {
                println!("Invalid({height}): {reason}");
                1
            }
        },
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        _ => 1,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Delay(a) => cmd_delay(a).map(|_| ()),
        Command::Ledger(LedgerCommand::Verify { path }) => return cmd_ledger_verify(path),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

pub fn main() -> ExitCode {
    ExitCode::from(run_with_args(std::env::args_os()))
}
