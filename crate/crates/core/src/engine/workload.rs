//! Request generators: per-client arrival processes and session streams.

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

use crate::types::{LambdaClass, Seconds};

/// Inter-arrival process of one client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Arrivals {
    /// Exponential gaps with mean `1 / rate`.
    Poisson { rate: f64 },
    /// Gaps uniform in `[min, max]`.
    Uniform { min: Seconds, max: Seconds },
    /// Constant gap.
    Periodic { period: Seconds },
}

impl Arrivals {
    /// Uniform gaps in `[mean / 2, 3 mean / 2]`.
    pub fn uniform_around(mean: Seconds) -> Self {
        Arrivals::Uniform {
            min: mean / 2.0,
            max: 1.5 * mean,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match *self {
            Arrivals::Poisson { rate } if !(rate > 0.0 && rate.is_finite()) => {
                Err(format!("poisson rate must be positive, got {rate}"))
            }
            Arrivals::Uniform { min, max } if !(min >= 0.0 && max >= min && max > 0.0) => {
                Err(format!("uniform gaps need 0 <= min <= max, max > 0 (min={min}, max={max})"))
            }
            Arrivals::Periodic { period } if !(period > 0.0) => {
                Err(format!("period must be positive, got {period}"))
            }
            _ => Ok(()),
        }
    }

    pub fn mean_gap(&self) -> Seconds {
        match *self {
            Arrivals::Poisson { rate } => 1.0 / rate,
            Arrivals::Uniform { min, max } => (min + max) / 2.0,
            Arrivals::Periodic { period } => period,
        }
    }

    pub fn next_gap(&self, rng: &mut impl Rng) -> Seconds {
        match *self {
            Arrivals::Poisson { rate } => Exp::new(rate).expect("validated rate").sample(rng),
            Arrivals::Uniform { min, max } => {
                if max > min {
                    rng.random_range(min..=max)
                } else {
                    min
                }
            }
            Arrivals::Periodic { period } => period,
        }
    }
}

/// One entry of a client's request mix; entries are drawn uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestChoice {
    pub class: LambdaClass,
    pub size: u64,
}

pub fn pick<'a, T>(items: &'a [T], rng: &mut impl Rng) -> &'a T {
    &items[rng.random_range(0..items.len())]
}

/// Streaming sessions started at random times in a set of cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionWorkload {
    pub cells: Vec<CellSpec>,
    /// Gap between consecutive requests within a session.
    pub period: Seconds,
    pub duration_min: Seconds,
    pub duration_max: Seconds,
    pub class: LambdaClass,
    /// Per-session input size, drawn uniformly in `[size_min, size_max]`.
    pub size_min: u64,
    pub size_max: u64,
    #[serde(default = "default_true")]
    pub tagged: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    /// Client nodes a session of this cell may attach to.
    pub sectors: Vec<String>,
    /// Session arrivals per second.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionPlan {
    pub cell: usize,
    pub sector: usize,
    pub start: Seconds,
    pub end: Seconds,
    pub size: u64,
}

impl SessionWorkload {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.period > 0.0) {
            return Err(format!("session period must be positive, got {}", self.period));
        }
        if !(self.duration_min > 0.0 && self.duration_max >= self.duration_min) {
            return Err("session durations need 0 < duration_min <= duration_max".into());
        }
        if self.size_min == 0 || self.size_max < self.size_min {
            return Err("session sizes need 0 < size_min <= size_max".into());
        }
        for (i, c) in self.cells.iter().enumerate() {
            if c.sectors.is_empty() {
                return Err(format!("cell {i} has no sectors"));
            }
            if !(c.rate >= 0.0 && c.rate.is_finite()) {
                return Err(format!("cell {i} has invalid rate {}", c.rate));
            }
        }
        Ok(())
    }

    /// Sessions overlapping `[0, horizon)`. Arrivals are drawn over
    /// `[-duration_max, horizon)` so the population at time 0 is already
    /// in steady state.
    pub fn plan(&self, horizon: Seconds, rng: &mut impl Rng) -> Vec<SessionPlan> {
        let span = horizon + self.duration_max;
        let mut out = Vec::new();
        for (cell, spec) in self.cells.iter().enumerate() {
            let mean = spec.rate * span;
            if mean <= 0.0 {
                continue;
            }
            let count = Poisson::new(mean).expect("positive mean").sample(rng) as usize;
            for _ in 0..count {
                let start = rng.random_range(-self.duration_max..horizon);
                let duration = if self.duration_max > self.duration_min {
                    rng.random_range(self.duration_min..=self.duration_max)
                } else {
                    self.duration_min
                };
                let sector = rng.random_range(0..spec.sectors.len());
                let size = rng.random_range(self.size_min..=self.size_max);
                if start + duration > 0.0 {
                    out.push(SessionPlan {
                        cell,
                        sector,
                        start,
                        end: start + duration,
                        size,
                    });
                }
            }
        }
        out.sort_by(|a, b| a.start.total_cmp(&b.start));
        out
    }
}
