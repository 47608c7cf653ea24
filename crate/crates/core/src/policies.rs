//! Destination selection policies.
//!
//! * `Est`: estimate-based shortest-delay selection (see [`crate::estimator`]).
//! * `Probe`: poll every candidate for its exact completion time.
//! * `Rpi`: smooth weighted round robin, weights from a zero-load profile.
//! * `Rr`: round robin among computers whose response time is at most the median.
//! * `Legacy`: closest computer in hops.
//! * `Centralized`: `Est` run by a single dispatcher at the topology root.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::estimator::{EstimatorError, EstimatorParams, EstimatorState};
use crate::network::Topology;
use crate::types::{LambdaClass, NodeId, Seconds};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Est,
    Probe,
    Rpi,
    Rr,
    Legacy,
    Centralized,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::Est,
        PolicyKind::Probe,
        PolicyKind::Rpi,
        PolicyKind::Rr,
        PolicyKind::Legacy,
        PolicyKind::Centralized,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Est => "est",
            PolicyKind::Probe => "probe",
            PolicyKind::Rpi => "rpi",
            PolicyKind::Rr => "rr",
            PolicyKind::Legacy => "legacy",
            PolicyKind::Centralized => "centralized",
        }
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown policy {s:?} (expected one of est, probe, rpi, rr, legacy, centralized)"))
    }
}

fn default_probe_size() -> u64 {
    100
}

fn default_rr_alpha() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    pub estimator: EstimatorParams,
    /// Bytes of each probe and probe reply.
    #[serde(default = "default_probe_size")]
    pub probe_size: u64,
    /// Smoothing factor of the response-time average used by `Rr`.
    #[serde(default = "default_rr_alpha")]
    pub rr_alpha: f64,
}

impl PolicyConfig {
    pub fn new(kind: PolicyKind, estimator: EstimatorParams) -> Self {
        Self {
            kind,
            estimator,
            probe_size: default_probe_size(),
            rr_alpha: default_rr_alpha(),
        }
    }
}

/// Argmin of advertised completion times, ties to the lowest id.
pub fn probe_select(replies: &[(NodeId, Seconds)]) -> Option<NodeId> {
    replies
        .iter()
        .copied()
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(k, _)| k)
}

/// Zero-load response times turned into relative weights: the fastest
/// computer gets 1, a computer twice as slow gets 1/2.
pub fn rpi_weights(times: &[(NodeId, Seconds)]) -> Vec<(NodeId, f64)> {
    let fastest = times.iter().map(|t| t.1).fold(f64::INFINITY, f64::min);
    times
        .iter()
        .map(|&(k, t)| (k, if t > 0.0 { fastest / t } else { 1.0 }))
        .collect()
}

/// Profiles every `(class, computer)` pair with `measure` and returns
/// per-class weights.
pub fn rpi_profile(
    candidates: &BTreeMap<LambdaClass, Vec<NodeId>>,
    mut measure: impl FnMut(NodeId, &LambdaClass) -> Seconds,
) -> BTreeMap<LambdaClass, Vec<(NodeId, f64)>> {
    candidates
        .iter()
        .map(|(class, ks)| {
            let times: Vec<_> = ks.iter().map(|&k| (k, measure(k, class))).collect();
            (class.clone(), rpi_weights(&times))
        })
        .collect()
}

/// Smooth weighted round robin: every round each candidate's counter grows
/// by its weight, the largest counter wins and is decreased by the total.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothWrr {
    entries: Vec<(NodeId, f64, f64)>,
}

impl SmoothWrr {
    pub fn new(weights: &[(NodeId, f64)]) -> Self {
        Self {
            entries: weights.iter().map(|&(k, w)| (k, w, 0.0)).collect(),
        }
    }

    pub fn next(&mut self) -> Option<NodeId> {
        if self.entries.is_empty() {
            return None;
        }
        let total: f64 = self.entries.iter().map(|e| e.1).sum();
        for e in &mut self.entries {
            e.2 += e.1;
        }
        let mut best = 0;
        for (i, e) in self.entries.iter().enumerate().skip(1) {
            let b = &self.entries[best];
            if e.2 > b.2 || (e.2 == b.2 && e.0 < b.0) {
                best = i;
            }
        }
        self.entries[best].2 -= total;
        Some(self.entries[best].0)
    }
}

/// Response-time categories with round robin inside the lower one.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseTimeRr {
    alpha: f64,
    ema: BTreeMap<NodeId, Seconds>,
    last: BTreeMap<LambdaClass, NodeId>,
}

impl ResponseTimeRr {
    pub fn new(alpha: f64) -> Self {
        Self {
            alpha,
            ema: BTreeMap::new(),
            last: BTreeMap::new(),
        }
    }

    pub fn observe(&mut self, computer: NodeId, delay: Seconds) {
        let alpha = self.alpha;
        self.ema
            .entry(computer)
            .and_modify(|e| *e = alpha * delay + (1.0 - alpha) * *e)
            .or_insert(delay);
    }

    pub fn ema(&self, computer: NodeId) -> Option<Seconds> {
        self.ema.get(&computer).copied()
    }

    /// Candidates in the lower category: EMA at most the median EMA, or no
    /// history at all.
    pub fn lower_category(&self, candidates: &[NodeId]) -> Vec<NodeId> {
        let mut known: Vec<Seconds> = candidates.iter().filter_map(|k| self.ema(*k)).collect();
        if known.is_empty() {
            return candidates.to_vec();
        }
        known.sort_by(f64::total_cmp);
        let n = known.len();
        let median = if n % 2 == 1 {
            known[n / 2]
        } else {
            (known[n / 2 - 1] + known[n / 2]) / 2.0
        };
        candidates
            .iter()
            .copied()
            .filter(|k| self.ema(*k).is_none_or(|e| e <= median))
            .collect()
    }

    pub fn select(&mut self, class: &LambdaClass, candidates: &[NodeId]) -> Option<NodeId> {
        let mut lower = self.lower_category(candidates);
        lower.sort();
        let pick = match self.last.get(class) {
            Some(&prev) => lower.iter().copied().find(|&k| k > prev).or(lower.first().copied()),
            None => lower.first().copied(),
        }?;
        self.last.insert(class.clone(), pick);
        Some(pick)
    }
}

/// Closest candidate to `from` in hops, ties to the lowest id.
pub fn legacy_select(topology: &Topology, from: NodeId, candidates: &[NodeId]) -> Option<NodeId> {
    candidates
        .iter()
        .copied()
        .min_by_key(|&k| (topology.hop_count(from, k), k))
}

/// Per-dispatcher policy state.
#[derive(Debug, Clone)]
pub enum PolicyState {
    Est(EstimatorState),
    Probe,
    Rpi(BTreeMap<LambdaClass, SmoothWrr>),
    Rr(ResponseTimeRr),
    Legacy,
}

impl PolicyState {
    /// State for `config.kind`. `Rpi` starts with no weights; install them
    /// with [`PolicyState::set_rpi_weights`].
    pub fn new(config: &PolicyConfig) -> Result<Self, EstimatorError> {
        Ok(match config.kind {
            PolicyKind::Est | PolicyKind::Centralized => Self::Est(EstimatorState::new(config.estimator.clone())?),
            PolicyKind::Probe => Self::Probe,
            PolicyKind::Rpi => Self::Rpi(BTreeMap::new()),
            PolicyKind::Rr => Self::Rr(ResponseTimeRr::new(config.rr_alpha)),
            PolicyKind::Legacy => Self::Legacy,
        })
    }

    pub fn set_rpi_weights(&mut self, weights: &BTreeMap<LambdaClass, Vec<(NodeId, f64)>>) {
        if let Self::Rpi(table) = self {
            *table = weights
                .iter()
                .map(|(c, w)| (c.clone(), SmoothWrr::new(w)))
                .collect();
        }
    }
}
