//! Dispatcher-side delay estimation.
//!
//! For every computer the dispatcher keeps a moving window of
//! `(input size, communication latency)` samples, and for every
//! `(computer, class, quantized size)` a moving window of
//! `(reported load, processing time)` samples. Each window is summarized by
//! an ordinary least-squares line; the estimated delay of a candidate is the
//! sum of the two lines evaluated at the request size and at the last load
//! the computer reported.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::types::{derive_comm_latency, LambdaClass, NodeId, Seconds, TransactionError, TransactionRecord};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub x: f64,
    pub y: f64,
    pub stamp: Seconds,
}

/// Bounded FIFO of samples; pushing beyond capacity evicts the oldest.
#[derive(Debug, Clone, PartialEq)]
pub struct MovingWindow {
    capacity: usize,
    samples: VecDeque<Sample>,
}

impl MovingWindow {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "window capacity must be positive");
        Self {
            capacity,
            samples: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.samples.iter()
    }

    pub fn push(&mut self, x: f64, y: f64, stamp: Seconds) {
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(Sample { x, y, stamp });
    }

    /// Drops samples stamped strictly before `cutoff`. Returns whether
    /// anything was removed.
    pub fn purge_before(&mut self, cutoff: Seconds) -> bool {
        let before = self.samples.len();
        self.samples.retain(|s| s.stamp >= cutoff);
        self.samples.len() != before
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
}

impl LinearFit {
    pub fn at(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

/// Ordinary least squares over the window. A single sample, or samples that
/// all share the same `x`, give a flat line through the mean of `y`.
/// Returns `None` for an empty window.
pub fn fit(window: &MovingWindow) -> Option<LinearFit> {
    let n = window.len();
    if n == 0 {
        return None;
    }
    let nf = n as f64;
    let (sx, sy) = window
        .samples()
        .fold((0.0, 0.0), |(sx, sy), s| (sx + s.x, sy + s.y));
    let (mx, my) = (sx / nf, sy / nf);
    let (sxx, sxy) = window.samples().fold((0.0, 0.0), |(sxx, sxy), s| {
        let dx = s.x - mx;
        (sxx + dx * dx, sxy + dx * (s.y - my))
    });
    // Relative test: x values that differ only by rounding count as equal.
    if sxx <= f64::EPSILON * f64::EPSILON * nf * mx * mx || sxx == 0.0 {
        return Some(LinearFit {
            intercept: my,
            slope: 0.0,
        });
    }
    let slope = sxy / sxx;
    Some(LinearFit {
        intercept: my - slope * mx,
        slope,
    })
}

/// Closest bucket to `size`; exact midpoints go to the smaller bucket.
/// `buckets` must be non-empty and strictly increasing.
pub fn quantize(size: u64, buckets: &[u64]) -> u64 {
    assert!(!buckets.is_empty(), "bucket set must not be empty");
    let idx = buckets.partition_point(|&b| b < size);
    if idx == 0 {
        return buckets[0];
    }
    if idx == buckets.len() {
        return buckets[idx - 1];
    }
    let (lo, hi) = (buckets[idx - 1], buckets[idx]);
    if hi - size < size - lo {
        hi
    } else {
        lo
    }
}

fn default_window() -> usize {
    100
}

fn default_lifetime() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorParams {
    /// Capacity of each latency window.
    #[serde(default = "default_window")]
    pub latency_window: usize,
    /// Capacity of each processing-time window.
    #[serde(default = "default_window")]
    pub ptime_window: usize,
    /// Quantized input sizes, bytes.
    pub buckets: Vec<u64>,
    /// Lifetime of latency samples, seconds. `null` in JSON means forever.
    #[serde(default = "default_lifetime", with = "lifetime")]
    pub latency_lifetime: f64,
    /// Lifetime of processing-time samples, seconds.
    #[serde(default = "default_lifetime", with = "lifetime")]
    pub ptime_lifetime: f64,
}

mod lifetime {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl EstimatorParams {
    pub fn with_buckets(buckets: Vec<u64>) -> Self {
        Self {
            latency_window: default_window(),
            ptime_window: default_window(),
            buckets,
            latency_lifetime: default_lifetime(),
            ptime_lifetime: default_lifetime(),
        }
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        if self.latency_window == 0 || self.ptime_window == 0 {
            return Err(EstimatorError::InvalidParams("window capacities must be positive".into()));
        }
        if self.buckets.is_empty() || self.buckets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EstimatorError::InvalidParams(
                "buckets must be non-empty and strictly increasing".into(),
            ));
        }
        if !(self.latency_lifetime > 0.0 && self.ptime_lifetime > 0.0) {
            return Err(EstimatorError::InvalidParams("lifetimes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EstimatorError {
    #[error("computer {computer} does not offer class {class}")]
    UnknownPairing { computer: NodeId, class: LambdaClass },
    #[error("no candidate computer")]
    NoCandidates,
    #[error("record has no executor")]
    MissingExecutor,
    #[error(transparent)]
    Transaction(#[from] TransactionError),
    #[error("invalid estimator parameters: {0}")]
    InvalidParams(String),
}

/// Estimated delay of one candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Score {
    /// Not enough state to estimate; the candidate should be explored.
    Fresh,
    Estimate(Seconds),
}

#[derive(Debug, Clone)]
struct FittedWindow {
    window: MovingWindow,
    fit: Option<LinearFit>,
}

impl FittedWindow {
    fn new(capacity: usize) -> Self {
        Self {
            window: MovingWindow::new(capacity),
            fit: None,
        }
    }

    fn push(&mut self, x: f64, y: f64, stamp: Seconds) {
        self.window.push(x, y, stamp);
        self.fit = fit(&self.window);
    }

    fn purge_before(&mut self, cutoff: Seconds) {
        if self.window.purge_before(cutoff) {
            self.fit = fit(&self.window);
        }
    }
}

type PtimeKey = (NodeId, LambdaClass, u64);

/// Everything one dispatcher knows about the computers it may use.
#[derive(Debug, Clone)]
pub struct EstimatorState {
    params: EstimatorParams,
    offerings: BTreeSet<(NodeId, LambdaClass)>,
    latency: BTreeMap<NodeId, FittedWindow>,
    ptime: BTreeMap<PtimeKey, FittedWindow>,
    last_load: BTreeMap<NodeId, f64>,
    score_evaluations: u64,
}

impl EstimatorState {
    pub fn new(params: EstimatorParams) -> Result<Self, EstimatorError> {
        params.validate()?;
        Ok(Self {
            params,
            offerings: BTreeSet::new(),
            latency: BTreeMap::new(),
            ptime: BTreeMap::new(),
            last_load: BTreeMap::new(),
            score_evaluations: 0,
        })
    }

    pub fn params(&self) -> &EstimatorParams {
        &self.params
    }

    /// Declares that `computer` hosts a container for `class`.
    pub fn add_offering(&mut self, computer: NodeId, class: LambdaClass) {
        self.offerings.insert((computer, class));
    }

    pub fn offers(&self, computer: NodeId, class: &LambdaClass) -> bool {
        self.offerings.contains(&(computer, class.clone()))
    }

    pub fn quantize(&self, size: u64) -> u64 {
        quantize(size, &self.params.buckets)
    }

    /// Absorbs a successful transaction measured by this dispatcher.
    pub fn house_keeping(&mut self, record: &TransactionRecord, now: Seconds) -> Result<(), EstimatorError> {
        let tau = derive_comm_latency(record)?;
        let computer = record.response.executor.ok_or(EstimatorError::MissingExecutor)?;
        let size = record.request.input_size;
        let (latency_cap, ptime_cap) = (self.params.latency_window, self.params.ptime_window);
        self.latency
            .entry(computer)
            .or_insert_with(|| FittedWindow::new(latency_cap))
            .push(size as f64, tau, now);
        let bucket = self.quantize(size);
        let load = record.response.reported_load;
        self.ptime
            .entry((computer, record.request.class.clone(), bucket))
            .or_insert_with(|| FittedWindow::new(ptime_cap))
            .push(load, record.response.processing_time, now);
        self.last_load.insert(computer, load);
        Ok(())
    }

    /// Discards every sample older than its lifetime.
    pub fn purge(&mut self, now: Seconds) {
        let latency_cutoff = now - self.params.latency_lifetime;
        for w in self.latency.values_mut() {
            w.purge_before(latency_cutoff);
        }
        let ptime_cutoff = now - self.params.ptime_lifetime;
        for w in self.ptime.values_mut() {
            w.purge_before(ptime_cutoff);
        }
        self.latency.retain(|_, w| !w.window.is_empty());
        self.ptime.retain(|_, w| !w.window.is_empty());
    }

    /// Purges only the windows that matter for scoring `computer` on a
    /// request of `class` quantized to `bucket`.
    fn purge_candidate(&mut self, computer: NodeId, class: &LambdaClass, bucket: u64, now: Seconds) {
        if let Some(w) = self.latency.get_mut(&computer) {
            w.purge_before(now - self.params.latency_lifetime);
        }
        if let Some(w) = self.ptime.get_mut(&(computer, class.clone(), bucket)) {
            w.purge_before(now - self.params.ptime_lifetime);
        }
    }

    /// A computer is fresh when no latency sample is held for it.
    pub fn is_fresh(&self, computer: NodeId) -> bool {
        self.latency.get(&computer).is_none_or(|w| w.window.is_empty())
    }

    pub fn last_load(&self, computer: NodeId) -> f64 {
        self.last_load.get(&computer).copied().unwrap_or(0.0)
    }

    pub fn latency_fit(&self, computer: NodeId) -> Option<LinearFit> {
        self.latency.get(&computer).and_then(|w| w.fit)
    }

    pub fn ptime_fit(&self, computer: NodeId, class: &LambdaClass, bucket: u64) -> Option<LinearFit> {
        self.ptime
            .get(&(computer, class.clone(), bucket))
            .and_then(|w| w.fit)
    }

    /// Estimated delay of running `class` with input `size` on `computer`.
    /// Each of the two components is clamped at zero before summing.
    pub fn score(&self, computer: NodeId, class: &LambdaClass, size: u64) -> Result<Score, EstimatorError> {
        if !self.offers(computer, class) {
            return Err(EstimatorError::UnknownPairing {
                computer,
                class: class.clone(),
            });
        }
        Ok(self.score_unchecked(computer, class, size, self.quantize(size)))
    }

    fn score_unchecked(&self, computer: NodeId, class: &LambdaClass, size: u64, bucket: u64) -> Score {
        let Some(latency) = self.latency_fit(computer) else {
            return Score::Fresh;
        };
        let Some(ptime) = self.ptime_fit(computer, class, bucket) else {
            return Score::Fresh;
        };
        let tau = latency.at(size as f64).max(0.0);
        let p = ptime.at(self.last_load(computer)).max(0.0);
        Score::Estimate(tau + p)
    }

    /// Picks the destination among `candidates`: the fresh candidate with
    /// the lowest id if any, else the lowest estimated delay (ties to the
    /// lowest id). Expired samples of the candidates are purged first.
    pub fn select(
        &mut self,
        candidates: &[NodeId],
        class: &LambdaClass,
        size: u64,
        now: Seconds,
    ) -> Result<NodeId, EstimatorError> {
        if candidates.is_empty() {
            return Err(EstimatorError::NoCandidates);
        }
        let bucket = self.quantize(size);
        let mut best_fresh: Option<NodeId> = None;
        let mut best: Option<(Seconds, NodeId)> = None;
        for &k in candidates {
            if !self.offers(k, class) {
                return Err(EstimatorError::UnknownPairing {
                    computer: k,
                    class: class.clone(),
                });
            }
            self.purge_candidate(k, class, bucket, now);
            self.score_evaluations += 1;
            match self.score_unchecked(k, class, size, bucket) {
                Score::Fresh => {
                    if best_fresh.is_none_or(|f| k < f) {
                        best_fresh = Some(k);
                    }
                }
                Score::Estimate(d) => {
                    let better = match best {
                        None => true,
                        Some((bd, bk)) => d < bd || (d == bd && k < bk),
                    };
                    if better {
                        best = Some((d, k));
                    }
                }
            }
        }
        Ok(best_fresh.or(best.map(|(_, k)| k)).expect("candidates is non-empty"))
    }

    /// Number of candidate scores computed by `select` so far.
    pub fn score_evaluations(&self) -> u64 {
        self.score_evaluations
    }

    /// Samples currently stored for `computer`, over all its windows.
    pub fn stored_samples(&self, computer: NodeId) -> usize {
        let latency = self.latency.get(&computer).map_or(0, |w| w.window.len());
        let ptime: usize = self
            .ptime
            .range((computer, LambdaClass::new(""), 0)..)
            .take_while(|((k, _, _), _)| *k == computer)
            .map(|(_, w)| w.window.len())
            .sum();
        latency + ptime
    }

    pub fn latency_samples(&self, computer: NodeId) -> usize {
        self.latency.get(&computer).map_or(0, |w| w.window.len())
    }

    pub fn ptime_samples(&self, computer: NodeId, class: &LambdaClass, bucket: u64) -> usize {
        self.ptime
            .get(&(computer, class.clone(), bucket))
            .map_or(0, |w| w.window.len())
    }
}
