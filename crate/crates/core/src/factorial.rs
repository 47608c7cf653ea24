//! 2^k r factorial designs: effects, allocation of variation, confidence
//! intervals and residual diagnostics, plus a bundled sensitivity study of
//! the estimator parameters on the clique family.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{run, EngineError, RunOutput};
use crate::policies::PolicyKind;
use crate::scenario::{ChainSpec, ClassSpec, Scenario};
use crate::simcomputer::ContainerSpec;
use crate::stats;
use crate::suites::{clique_scenario, CLIQUE_SIZES};
use crate::types::LambdaClass;

/// Largest supported number of factors.
pub const MAX_FACTORS: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum FactorialError {
    #[error("design needs between 1 and {MAX_FACTORS} factors, got {0}")]
    FactorCount(usize),
    #[error("design needs at least one replication")]
    NoReplications,
    #[error("factor {0:?} has equal low and high levels")]
    DegenerateFactor(String),
    #[error("expected {expected} responses per cell, cell {cell} has {found}")]
    Incomplete { cell: usize, expected: usize, found: usize },
    #[error("expected {expected} cells, got {found}")]
    CellCount { expected: usize, found: usize },
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("row {row}: {message}")]
    BadRow { row: usize, message: String },
    #[error("unknown sensitivity factor {0:?}")]
    UnknownFactor(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub name: String,
    pub low: f64,
    pub high: f64,
}

impl Factor {
    pub fn new(name: &str, low: f64, high: f64) -> Self {
        Self {
            name: name.into(),
            low,
            high,
        }
    }
}

/// Cells are numbered so that bit `j` of the cell index is set when factor
/// `j` is at its high level. Effect columns are numbered the same way: bit
/// `j` of the column index says factor `j` takes part in the interaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorialDesign {
    pub factors: Vec<Factor>,
    pub replications: usize,
}

impl FactorialDesign {
    pub fn new(factors: Vec<Factor>, replications: usize) -> Result<Self, FactorialError> {
        let d = Self { factors, replications };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), FactorialError> {
        if self.factors.is_empty() || self.factors.len() > MAX_FACTORS {
            return Err(FactorialError::FactorCount(self.factors.len()));
        }
        if self.replications == 0 {
            return Err(FactorialError::NoReplications);
        }
        if let Some(f) = self.factors.iter().find(|f| f.low == f.high) {
            return Err(FactorialError::DegenerateFactor(f.name.clone()));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.factors.len()
    }

    pub fn cells(&self) -> usize {
        1 << self.k()
    }

    /// +1 or -1.
    pub fn sign(cell: usize, column: usize) -> f64 {
        if (!cell & column).count_ones() % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Rows are cells, columns are effects (column 0 is the identity).
    pub fn sign_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.cells();
        (0..n)
            .map(|cell| (0..n).map(|col| Self::sign(cell, col)).collect())
            .collect()
    }

    /// "I" for the identity, then letters: "A", "B", "AB", "C", ...
    pub fn effect_name(column: usize) -> String {
        if column == 0 {
            return "I".into();
        }
        (0..MAX_FACTORS)
            .filter(|j| column & (1 << j) != 0)
            .map(|j| (b'A' + j as u8) as char)
            .collect()
    }

    pub fn level(&self, cell: usize, factor: usize) -> f64 {
        let f = &self.factors[factor];
        if cell & (1 << factor) != 0 {
            f.high
        } else {
            f.low
        }
    }

    pub fn levels(&self, cell: usize) -> Vec<f64> {
        (0..self.k()).map(|j| self.level(cell, j)).collect()
    }
}

/// One row per cell, one column per replication.
pub type Responses = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Effect {
    pub name: String,
    pub q: f64,
    /// Percentage of the total variation; `None` for the identity column.
    pub variation: Option<f64>,
    /// 95% interval, available only with more than one replication.
    pub ci: Option<(f64, f64)>,
}

impl Effect {
    /// Zero lies outside the interval.
    pub fn significant(&self) -> Option<bool> {
        self.ci.map(|(lo, hi)| lo > 0.0 || hi < 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Analysis {
    pub effects: Vec<Effect>,
    pub sst: f64,
    pub sse: f64,
    /// Percentage of the variation left to the residuals.
    pub residual_variation: f64,
    /// Degrees of freedom of the error; zero when r = 1.
    pub dof: usize,
    pub cis_available: bool,
}

impl Analysis {
    pub fn q(&self) -> Vec<f64> {
        self.effects.iter().map(|e| e.q).collect()
    }

    pub fn effect(&self, name: &str) -> Option<&Effect> {
        self.effects.iter().find(|e| e.name == name)
    }
}

fn check_responses(design: &FactorialDesign, responses: &Responses) -> Result<(), FactorialError> {
    design.validate()?;
    if responses.len() != design.cells() {
        return Err(FactorialError::CellCount {
            expected: design.cells(),
            found: responses.len(),
        });
    }
    for (cell, row) in responses.iter().enumerate() {
        if row.len() != design.replications {
            return Err(FactorialError::Incomplete {
                cell,
                expected: design.replications,
                found: row.len(),
            });
        }
    }
    Ok(())
}

/// Effects of every factor and interaction at a 95% level.
pub fn effects(design: &FactorialDesign, responses: &Responses) -> Result<Analysis, FactorialError> {
    effects_at(design, responses, 0.95)
}

pub fn effects_at(design: &FactorialDesign, responses: &Responses, level: f64) -> Result<Analysis, FactorialError> {
    check_responses(design, responses)?;
    let n = design.cells();
    let r = design.replications;
    let means: Vec<f64> = responses.iter().map(|row| stats::mean(row)).collect();
    let q: Vec<f64> = (0..n)
        .map(|col| {
            (0..n)
                .map(|cell| FactorialDesign::sign(cell, col) * means[cell])
                .sum::<f64>()
                / n as f64
        })
        .collect();
    let grand = q[0];
    let sst: f64 = responses.iter().flatten().map(|y| (y - grand).powi(2)).sum();
    let sse: f64 = responses
        .iter()
        .zip(&means)
        .map(|(row, m)| row.iter().map(|y| (y - m).powi(2)).sum::<f64>())
        .sum();
    let dof = n * (r - 1);
    let half_width = (dof > 0).then(|| {
        let se = (sse / dof as f64).sqrt();
        let sq = se / ((n * r) as f64).sqrt();
        stats::t_quantile(0.5 + level / 2.0, dof as f64) * sq
    });
    let share = |ss: f64| if sst > 0.0 { 100.0 * ss / sst } else { 0.0 };
    let effects = q
        .iter()
        .enumerate()
        .map(|(col, &qi)| Effect {
            name: FactorialDesign::effect_name(col),
            q: qi,
            variation: (col != 0).then(|| share((n * r) as f64 * qi * qi)),
            ci: half_width.map(|h| (qi - h, qi + h)),
        })
        .collect();
    Ok(Analysis {
        effects,
        sst,
        sse,
        residual_variation: share(sse),
        dof,
        cis_available: dof > 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Residual {
    pub cell: usize,
    pub replication: usize,
    pub predicted: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QqPoint {
    pub normal: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub residuals: Vec<Residual>,
    pub qq: Vec<QqPoint>,
}

/// Residuals against the full model built from `q`, and normal Q-Q pairs
/// using plotting positions `(i - 0.5) / n`.
pub fn residual_diagnostics(
    design: &FactorialDesign,
    responses: &Responses,
    q: &[f64],
) -> Result<Diagnostics, FactorialError> {
    check_responses(design, responses)?;
    let n = design.cells();
    if q.len() != n {
        return Err(FactorialError::CellCount {
            expected: n,
            found: q.len(),
        });
    }
    let mut residuals = Vec::with_capacity(n * design.replications);
    for (cell, row) in responses.iter().enumerate() {
        let predicted: f64 = q
            .iter()
            .enumerate()
            .map(|(col, qi)| FactorialDesign::sign(cell, col) * qi)
            .sum();
        for (replication, y) in row.iter().enumerate() {
            residuals.push(Residual {
                cell,
                replication,
                predicted,
                residual: y - predicted,
            });
        }
    }
    let mut sorted: Vec<f64> = residuals.iter().map(|r| r.residual).collect();
    sorted.sort_by(f64::total_cmp);
    let total = sorted.len() as f64;
    let qq = sorted
        .into_iter()
        .enumerate()
        .map(|(i, residual)| QqPoint {
            normal: stats::normal_quantile((i as f64 + 0.5) / total),
            residual,
        })
        .collect();
    Ok(Diagnostics { residuals, qq })
}

// ---------------------------------------------------------------------------
// CSV

/// Reads one row per cell and replication: a column per factor holding the
/// level (`-`, `+`, or the numeric low/high value) and a `response` column.
/// Replications of a cell are taken in file order.
pub fn read_responses<R: Read>(design: &FactorialDesign, reader: R) -> Result<Responses, FactorialError> {
    design.validate()?;
    let mut csv = csv::Reader::from_reader(reader);
    let headers = csv.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| FactorialError::MissingColumn(name.into()))
    };
    let factor_columns = design
        .factors
        .iter()
        .map(|f| column(&f.name))
        .collect::<Result<Vec<_>, _>>()?;
    let response_column = column("response")?;
    let mut responses: Responses = vec![Vec::new(); design.cells()];
    for (i, record) in csv.records().enumerate() {
        let record = record?;
        let row = i + 2;
        let bad = |message: String| FactorialError::BadRow { row, message };
        let mut cell = 0;
        for (j, (&c, factor)) in factor_columns.iter().zip(&design.factors).enumerate() {
            let raw = record.get(c).unwrap_or("").trim();
            let high = match raw {
                "+" => true,
                "-" => false,
                _ => {
                    let v: f64 = raw
                        .parse()
                        .map_err(|_| bad(format!("{}: bad level {raw:?}", factor.name)))?;
                    if close(v, factor.high) {
                        true
                    } else if close(v, factor.low) {
                        false
                    } else {
                        return Err(bad(format!("{}: {v} is neither level", factor.name)));
                    }
                }
            };
            if high {
                cell |= 1 << j;
            }
        }
        let raw = record.get(response_column).unwrap_or("").trim();
        let y: f64 = raw.parse().map_err(|_| bad(format!("bad response {raw:?}")))?;
        responses[cell].push(y);
    }
    check_responses(design, &responses)?;
    Ok(responses)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

pub fn write_responses<W: Write>(design: &FactorialDesign, responses: &Responses, writer: W) -> Result<(), FactorialError> {
    let mut csv = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = design.factors.iter().map(|f| f.name.clone()).collect();
    header.extend(["replication".into(), "response".into()]);
    csv.write_record(&header)?;
    for (cell, row) in responses.iter().enumerate() {
        for (rep, y) in row.iter().enumerate() {
            let mut record: Vec<String> = design.levels(cell).iter().map(f64::to_string).collect();
            record.push(rep.to_string());
            record.push(y.to_string());
            csv.write_record(&record)?;
        }
    }
    csv.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Columns: effect, q, variation_percent, ci_low, ci_high, significant. The
/// last row is the residual share of variation.
pub fn write_effects<W: Write>(analysis: &Analysis, writer: W) -> Result<(), FactorialError> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["effect", "q", "variation_percent", "ci_low", "ci_high", "significant"])?;
    for e in &analysis.effects {
        csv.write_record([
            e.name.clone(),
            e.q.to_string(),
            opt(e.variation),
            opt(e.ci.map(|c| c.0)),
            opt(e.ci.map(|c| c.1)),
            e.significant().map(|s| s.to_string()).unwrap_or_default(),
        ])?;
    }
    csv.write_record([
        "residual".into(),
        String::new(),
        analysis.residual_variation.to_string(),
        String::new(),
        String::new(),
        String::new(),
    ])?;
    csv.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Columns: cell, replication, predicted, residual.
pub fn write_residuals<W: Write>(diag: &Diagnostics, writer: W) -> Result<(), FactorialError> {
    let mut csv = csv::Writer::from_writer(writer);
    for r in &diag.residuals {
        csv.serialize(r)?;
    }
    csv.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Columns: normal, residual.
pub fn write_qq<W: Write>(diag: &Diagnostics, writer: W) -> Result<(), FactorialError> {
    let mut csv = csv::Writer::from_writer(writer);
    for p in &diag.qq {
        csv.serialize(p)?;
    }
    csv.flush().map_err(csv::Error::from)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Bundled sensitivity study

/// Metric extracted from each run of a sensitivity cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// 90th percentile of the tagged delay, seconds.
    P90Delay,
    /// Total network throughput, bits per second.
    Throughput,
    /// Mean busy fraction over all computers.
    Load,
    /// Median of |estimated - measured| processing time, seconds.
    PtimeError,
    /// Median of |estimated - measured| communication latency, seconds.
    LatencyError,
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "p90_delay" => Ok(Self::P90Delay),
            "throughput" => Ok(Self::Throughput),
            "load" => Ok(Self::Load),
            "ptime_error" => Ok(Self::PtimeError),
            "latency_error" => Ok(Self::LatencyError),
            _ => Err(format!(
                "unknown metric {s:?}; expected p90_delay, throughput, load, ptime_error or latency_error"
            )),
        }
    }
}

impl Metric {
    pub fn extract(self, out: &RunOutput) -> f64 {
        let median_error = |f: fn(&crate::engine::TransactionRow) -> Option<f64>| {
            let errors: Vec<f64> = out.transactions.iter().filter_map(f).collect();
            stats::percentile(&errors, 50.0).unwrap_or(f64::NAN)
        };
        match self {
            Metric::P90Delay => out.delay_percentile(90.0).unwrap_or(f64::NAN),
            Metric::Throughput => out.throughput,
            Metric::Load => stats::mean(&out.computers.iter().map(|c| c.utilization).collect::<Vec<_>>()),
            Metric::PtimeError => median_error(|t| match (t.code, t.est_p) {
                (crate::types::ReturnCode::Ok, Some(e)) => Some((e - t.p).abs()),
                _ => None,
            }),
            Metric::LatencyError => median_error(|t| match (t.code, t.est_tau) {
                (crate::types::ReturnCode::Ok, Some(e)) => Some((e - t.tau).abs()),
                _ => None,
            }),
        }
    }
}

/// Factor names understood by [`sensitivity_scenario`].
pub const SENSITIVITY_FACTORS: [&str; 6] = [
    "others",
    "latency_window",
    "ptime_window",
    "latency_lifetime",
    "ptime_lifetime",
    "eyes",
];

/// Eyes detection input: one face cropped out of the picture.
pub const EYES_SIZE_RATIO: f64 = 0.05;

/// Six factors, ten replications: other clients (1 or 4), the two window
/// sizes, the two lifetimes, and face only vs face followed by eyes.
pub fn sensitivity_design() -> FactorialDesign {
    FactorialDesign {
        factors: vec![
            Factor::new("others", 1.0, 4.0),
            Factor::new("latency_window", 5.0, 50.0),
            Factor::new("ptime_window", 5.0, 50.0),
            Factor::new("latency_lifetime", 5.0, 60.0),
            Factor::new("ptime_lifetime", 5.0, 60.0),
            Factor::new("eyes", 0.0, 1.0),
        ],
        replications: 10,
    }
}

/// The clique scenario under Est with the cell's factor levels applied.
pub fn sensitivity_scenario(design: &FactorialDesign, cell: usize) -> Result<Scenario, FactorialError> {
    let value = |name: &str, default: f64| {
        design
            .factors
            .iter()
            .position(|f| f.name == name)
            .map_or(default, |j| design.level(cell, j))
    };
    if let Some(f) = design.factors.iter().find(|f| !SENSITIVITY_FACTORS.contains(&f.name.as_str())) {
        return Err(FactorialError::UnknownFactor(f.name.clone()));
    }
    let mut s = clique_scenario(value("others", 1.0).round().max(0.0) as usize, PolicyKind::Est);
    s.name = format!("sensitivity-{cell}");
    let est = &mut s.policy.estimator;
    est.latency_window = value("latency_window", est.latency_window as f64).round().max(1.0) as usize;
    est.ptime_window = value("ptime_window", est.ptime_window as f64).round().max(1.0) as usize;
    est.latency_lifetime = value("latency_lifetime", est.latency_lifetime);
    est.ptime_lifetime = value("ptime_lifetime", est.ptime_lifetime);
    if value("eyes", 0.0) >= 0.5 {
        let eyes = LambdaClass::new("eyes");
        s.classes[0].chain = Some(ChainSpec {
            class: eyes.clone(),
            size_ratio: EYES_SIZE_RATIO,
        });
        s.classes.push(ClassSpec {
            output_offset: 100.0,
            output_ratio: 0.0,
            ..ClassSpec::new("eyes")
        });
        for c in &mut s.computers {
            c.spec.containers.push(ContainerSpec {
                class: eyes.clone(),
                workers: 8,
                ops_offset: 0.01,
                ops_slope: 2e-6,
                mem_offset: 10e6,
                mem_slope: 200.0,
            });
        }
        let mut buckets: Vec<u64> = CLIQUE_SIZES
            .iter()
            .map(|&b| ((b as f64 * EYES_SIZE_RATIO).round() as u64).max(1))
            .chain(CLIQUE_SIZES)
            .collect();
        buckets.sort_unstable();
        buckets.dedup();
        est.buckets = buckets;
    }
    Ok(s)
}

/// Runs every cell `replications` times; replication `r` of every cell uses
/// seed `seed * 1000003 + r`, so cells share random streams.
pub fn run_sensitivity(
    design: &FactorialDesign,
    metric: Metric,
    seed: u64,
    duration: Option<f64>,
    parallel: bool,
) -> Result<Responses, FactorialError> {
    design.validate()?;
    let mut jobs = Vec::with_capacity(design.cells() * design.replications);
    for cell in 0..design.cells() {
        let mut scenario = sensitivity_scenario(design, cell)?;
        if let Some(d) = duration {
            scenario.duration = d;
        }
        for rep in 0..design.replications {
            jobs.push((cell, scenario.clone(), seed.wrapping_mul(1_000_003).wrapping_add(rep as u64)));
        }
    }
    let go = |(cell, s, seed): &(usize, Scenario, u64)| run(s, *seed).map(|out| (*cell, metric.extract(&out)));
    let results: Vec<Result<(usize, f64), EngineError>> = if parallel {
        jobs.par_iter().map(go).collect()
    } else {
        jobs.iter().map(go).collect()
    };
    let mut responses: Responses = vec![Vec::with_capacity(design.replications); design.cells()];
    for r in results {
        let (cell, y) = r?;
        responses[cell].push(y);
    }
    Ok(responses)
}
