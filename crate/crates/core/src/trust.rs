//! Beta-expectation trust with a leak penalty, threshold classification,
//! and the conspirator rule.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MacAddress;

/// How the penalty factor applies.
///
/// `Literal` evaluates `exp(-(sec + lek) / sec)` for every worker, which caps
/// a leak-free worker at `e^-1`. `OnLeak` applies the same factor only once a
/// leak has been recorded.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyMode {
    Literal,
    #[default]
    OnLeak,
}

impl fmt::Display for PenaltyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PenaltyMode::Literal => "literal",
            PenaltyMode::OnLeak => "on-leak",
        })
    }
}

impl FromStr for PenaltyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(PenaltyMode::Literal),
            "on-leak" => Ok(PenaltyMode::OnLeak),
            other => Err(Error::Config(format!("unknown penalty mode {other:?}"))),
        }
    }
}

/// `(1 + sec) / (2 + sec + lek)`, the mean of Beta(sec + 1, lek + 1).
pub fn base_trust(sec: u64, lek: u64) -> f64 {
    (1 + sec) as f64 / (2 + sec + lek) as f64
}

/// Penalty factor. At `sec = 0` the limits are used: 1 for a newcomer,
/// 0 once any leak is recorded.
pub fn penalty(sec: u64, lek: u64, mode: PenaltyMode) -> f64 {
    if mode == PenaltyMode::OnLeak && lek == 0 {
        return 1.0;
    }
    match (sec, lek) {
        (0, 0) => 1.0,
        (0, _) => 0.0,
        _ => (-((sec + lek) as f64) / sec as f64).exp(),
    }
}

pub fn trust_value(sec: u64, lek: u64, mode: PenaltyMode) -> f64 {
    base_trust(sec, lek) * penalty(sec, lek, mode)
}

/// Low, medium and high trust thresholds, strictly ordered inside (0, 1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub delta_l: f64,
    pub delta_m: f64,
    pub delta_h: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            delta_l: 0.2,
            delta_m: 0.5,
            delta_h: 0.8,
        }
    }
}

impl Thresholds {
    pub fn new(delta_l: f64, delta_m: f64, delta_h: f64) -> Result<Self> {
        let t = Self {
            delta_l,
            delta_m,
            delta_h,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if 0.0 < self.delta_l
            && self.delta_l < self.delta_m
            && self.delta_m < self.delta_h
            && self.delta_h < 1.0
        {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "thresholds must satisfy 0 < l < m < h < 1, got {self}"
            )))
        }
    }
}

impl fmt::Display for Thresholds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.delta_l, self.delta_m, self.delta_h)
    }
}

impl FromStr for Thresholds {
    type Err = Error;

    /// `"l,m,h"`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad threshold {p:?} in {s:?}")))
            })
            .collect::<Result<_>>()?;
        match parts.as_slice() {
            [l, m, h] => Thresholds::new(*l, *m, *h),
            _ => Err(Error::Config(format!(
                "expected three thresholds l,m,h, got {s:?}"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Classification {
    /// `tr >= δ_h`: real documents.
    Honest,
    /// `δ_m <= tr < δ_h`: real documents, access audited, no trap.
    Monitored,
    /// `δ_l <= tr < δ_m`: receives trap documents.
    SemiHonest,
    /// `tr < δ_l`: denied.
    Dishonest,
    /// Caught by the conspirator rule; permanent for the run.
    Removed,
}

impl Classification {
    pub fn is_flagged(self) -> bool {
        matches!(self, Classification::Dishonest | Classification::Removed)
    }
}

pub fn classify(tr: f64, thresholds: &Thresholds) -> Classification {
    if tr >= thresholds.delta_h {
        Classification::Honest
    } else if tr >= thresholds.delta_m {
        Classification::Monitored
    } else if tr >= thresholds.delta_l {
        Classification::SemiHonest
    } else {
        Classification::Dishonest
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Kept,
    Leaked,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrustState {
    pub sec: u64,
    pub lek: u64,
    pub tr: f64,
}

impl TrustState {
    pub fn from_counts(sec: u64, lek: u64, mode: PenaltyMode) -> Self {
        Self {
            sec,
            lek,
            tr: trust_value(sec, lek, mode),
        }
    }

    pub fn newcomer(mode: PenaltyMode) -> Self {
        Self::from_counts(0, 0, mode)
    }
}

pub fn register_outcome(state: TrustState, outcome: Outcome, mode: PenaltyMode) -> TrustState {
    match outcome {
        Outcome::Kept => TrustState::from_counts(state.sec + 1, state.lek, mode),
        Outcome::Leaked => TrustState::from_counts(state.sec, state.lek + 1, mode),
    }
}

/// Foreign MACs observed leaking a worker's trap documents, in discovery order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConspiracyState {
    path: Vec<MacAddress>,
}

impl ConspiracyState {
    /// Adds `mac` if unseen; returns whether it was new.
    pub fn observe(&mut self, mac: MacAddress) -> bool {
        if self.path.contains(&mac) {
            return false;
        }
        self.path.push(mac);
        true
    }

    pub fn mu(&self) -> usize {
        self.path.len()
    }

    pub fn path(&self) -> &[MacAddress] {
        &self.path
    }
}

/// With no conspirators the state stands and the worker keeps its
/// threshold classification; with one or more, trust drops to 0 and the
/// worker is removed.
pub fn apply_conspirator_rule(
    state: TrustState,
    conspiracy: &ConspiracyState,
    thresholds: &Thresholds,
) -> (TrustState, Classification) {
    if conspiracy.mu() == 0 {
        (state, classify(state.tr, thresholds))
    } else {
        (TrustState { tr: 0.0, ..state }, Classification::Removed)
    }
}
