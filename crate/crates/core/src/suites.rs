//! Bundled experiment families and their replicated comparisons.
//!
//! * `limitations`: two heterogeneous computers behind a root, four resource
//!   cases (baseline, CPU, memory, network) under Probe, RPI and Est.
//! * `clique`: four fully meshed edge nodes with 1 to 4 cores, a growing
//!   population of roaming clients, Est vs RR vs Legacy.
//! * `fattree`: Monte Carlo drops of AR sessions on a 3x3 region of base
//!   stations, Dist Est vs Centralized vs Dist Probe vs Legacy.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::workload::{Arrivals, CellSpec, RequestChoice, SessionWorkload};
use crate::engine::{rng_stream, run, EngineError, RunOutput};
use crate::estimator::EstimatorParams;
use crate::network::{BackgroundTraffic, CliqueParams, DumbbellParams, FatTreeParams};
use crate::policies::{PolicyConfig, PolicyKind};
use crate::scenario::{BackgroundSpec, ClassSpec, ClientSpec, ComputerPlacement, RoamingSpec, Scenario, TopologySpec};
use crate::simcomputer::{ComputerSpec, ContainerSpec};
use crate::stats::{self, ConfidenceInterval};
use crate::types::{LambdaClass, Seconds};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Limitations,
    Clique,
    Fattree,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Limitations => "limitations",
            Family::Clique => "clique",
            Family::Fattree => "fattree",
        })
    }
}

impl std::str::FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "limitations" => Ok(Family::Limitations),
            "clique" => Ok(Family::Clique),
            "fattree" => Ok(Family::Fattree),
            _ => Err(format!("unknown suite {s:?} (expected limitations, clique or fattree)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteOptions {
    /// Independent replications per configuration.
    pub reps: usize,
    /// Monte Carlo drops (fat-tree family only).
    pub drops: usize,
    pub seed: u64,
    pub parallel: bool,
    /// Overrides the simulated duration of every run.
    pub duration: Option<Seconds>,
    /// Restricts the policies compared.
    pub policies: Option<Vec<PolicyKind>>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            reps: 10,
            drops: 50,
            seed: 1,
            parallel: true,
            duration: None,
            policies: None,
        }
    }
}

impl SuiteOptions {
    fn policies(&self, defaults: &[PolicyKind]) -> Vec<PolicyKind> {
        match &self.policies {
            Some(p) => defaults.iter().copied().filter(|k| p.contains(k)).collect(),
            None => defaults.to_vec(),
        }
    }

    fn apply(&self, mut s: Scenario) -> Scenario {
        if let Some(d) = self.duration {
            s.duration = d;
        }
        s
    }

    /// Seed of replication `rep`.
    pub fn rep_seed(&self, rep: usize) -> u64 {
        self.seed.wrapping_mul(1_000_003).wrapping_add(rep as u64)
    }
}

/// Runs `jobs` (scenario, seed), possibly in parallel, mapping each output
/// through `digest` so full outputs need not be kept.
pub fn run_all<T: Send>(
    jobs: &[(Scenario, u64)],
    parallel: bool,
    digest: impl Fn(RunOutput) -> T + Sync + Send,
) -> Result<Vec<T>, EngineError> {
    let one = |(s, seed): &(Scenario, u64)| run(s, *seed).map(&digest);
    if parallel {
        jobs.par_iter().map(one).collect()
    } else {
        jobs.iter().map(one).collect()
    }
}

fn container(class: &str, workers: usize, ops_offset: f64, ops_slope: f64, mem_offset: f64, mem_slope: f64) -> ContainerSpec {
    ContainerSpec {
        class: LambdaClass::new(class),
        workers,
        ops_offset,
        ops_slope,
        mem_offset,
        mem_slope,
    }
}

fn computer(node: &str, cores: usize, memory: f64, containers: Vec<ContainerSpec>) -> ComputerPlacement {
    ComputerPlacement {
        node: node.into(),
        spec: ComputerSpec {
            cores,
            core_speed: 1.0,
            memory,
            containers,
            load_window: 1.0,
        },
    }
}

fn requests(class: &str, sizes: &[u64]) -> Vec<RequestChoice> {
    sizes
        .iter()
        .map(|&size| RequestChoice {
            class: LambdaClass::new(class),
            size,
        })
        .collect()
}

/// Face detection output: a handful of rectangles.
fn face_class(name: &str) -> ClassSpec {
    ClassSpec {
        output_offset: 200.0,
        output_ratio: 0.0,
        ..ClassSpec::new(name)
    }
}

// ---------------------------------------------------------------------------
// Resource limitations

/// Picture sizes in bytes: 320x240, 640x480, 1024x768, 1280x960.
pub const PICTURE_SIZES: [u64; 4] = [20_000, 60_000, 120_000, 180_000];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitCase {
    Baseline,
    Cpu,
    Memory,
    Network,
}

impl LimitCase {
    pub const ALL: [LimitCase; 4] = [LimitCase::Baseline, LimitCase::Cpu, LimitCase::Memory, LimitCase::Network];
}

impl fmt::Display for LimitCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LimitCase::Baseline => "baseline",
            LimitCase::Cpu => "cpu",
            LimitCase::Memory => "memory",
            LimitCase::Network => "network",
        })
    }
}

pub const LIMITATION_POLICIES: [PolicyKind; 3] = [PolicyKind::Probe, PolicyKind::Rpi, PolicyKind::Est];

/// Interfering clients on each side outside the baseline.
pub const INTERFERERS_PER_SIDE: usize = 2;

pub fn limitations_scenario(case: LimitCase, policy: PolicyKind) -> Scenario {
    let interferers = if case == LimitCase::Baseline { 0 } else { INTERFERERS_PER_SIDE };
    // Face detection: 20 ms plus 2 us per byte; 20 MB plus 200 B per byte.
    let face = |class: &str| container(class, 4, 0.02, 2e-6, 20e6, 200.0);
    let rhs_cores = if case == LimitCase::Cpu { 1 } else { 3 };
    let rhs_memory = if case == LimitCase::Memory { 64e6 } else { 8e9 };
    let mut clients = vec![ClientSpec {
        name: "tagged".into(),
        node: "tagged".into(),
        dispatcher: None,
        tagged: true,
        arrivals: Arrivals::uniform_around(0.2),
        requests: requests("lambda2", &PICTURE_SIZES[..1]),
        roaming: None,
    }];
    for (side, class) in [("lhs", "lambda1"), ("rhs", "lambda3")] {
        for i in 0..interferers {
            clients.push(ClientSpec {
                name: format!("{side}_c{i}"),
                node: format!("{side}_c{i}"),
                dispatcher: None,
                tagged: false,
                arrivals: Arrivals::uniform_around(1.0),
                requests: requests(class, &PICTURE_SIZES),
                roaming: None,
            });
        }
    }
    let background = if case == LimitCase::Network {
        vec![BackgroundSpec {
            a: "root".into(),
            b: "lhs".into(),
            traffic: BackgroundTraffic {
                fraction: 0.8,
                on: 3.0,
                period: 5.0,
                offset: 0.0,
            },
            both_directions: true,
        }]
    } else {
        vec![]
    };
    Scenario {
        name: format!("limitations-{case}-{policy}"),
        seed: 1,
        duration: 300.0,
        warmup_fraction: 0.1,
        topology: TopologySpec::DumbbellHet(DumbbellParams::new(interferers)),
        classes: vec![face_class("lambda1"), face_class("lambda2"), face_class("lambda3")],
        computers: vec![
            computer("lhs", 3, 8e9, vec![face("lambda1"), face("lambda2")]),
            computer("rhs", rhs_cores, rhs_memory, vec![face("lambda2"), face("lambda3")]),
        ],
        policy: PolicyConfig::new(policy, EstimatorParams::with_buckets(vec![PICTURE_SIZES[0]])),
        dispatcher_overhead: 0.0,
        probe_overhead: 0.002,
        root: "root".into(),
        clients,
        sessions: None,
        background,
        load_sample_interval: 1.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitationsRow {
    pub case: LimitCase,
    pub policy: PolicyKind,
    /// 90th percentile of the tagged delay, one value per replication.
    pub p90: Vec<Seconds>,
    pub p90_ci: ConfidenceInterval,
    /// Utilization of LHS and RHS, one pair per replication.
    pub load: Vec<[f64; 2]>,
    /// Tagged transactions per executor (LHS, RHS), summed over replications.
    pub tagged_executions: [u64; 2],
}

pub fn limitations(opts: &SuiteOptions) -> Result<Vec<LimitationsRow>, EngineError> {
    let policies = opts.policies(&LIMITATION_POLICIES);
    let mut configs = Vec::new();
    let mut jobs = Vec::new();
    for case in LimitCase::ALL {
        for &policy in &policies {
            configs.push((case, policy));
            let s = opts.apply(limitations_scenario(case, policy));
            for rep in 0..opts.reps {
                jobs.push((s.clone(), opts.rep_seed(rep)));
            }
        }
    }
    let digests = run_all(&jobs, opts.parallel, |out| {
        let p90 = out.delay_percentile(90.0).unwrap_or(f64::NAN);
        let load = [out.computers[0].utilization, out.computers[1].utilization];
        let mut execs = [0u64; 2];
        for t in out.transactions.iter().filter(|t| t.tagged) {
            match t.executor.as_deref() {
                Some("lhs") => execs[0] += 1,
                Some("rhs") => execs[1] += 1,
                _ => {}
            }
        }
        (p90, load, execs)
    })?;
    Ok(configs
        .into_iter()
        .zip(digests.chunks(opts.reps.max(1)))
        .map(|((case, policy), reps)| {
            let p90: Vec<f64> = reps.iter().map(|r| r.0).collect();
            LimitationsRow {
                case,
                policy,
                p90_ci: ci(&p90),
                p90,
                load: reps.iter().map(|r| r.1).collect(),
                tagged_executions: reps.iter().fold([0, 0], |acc, r| [acc[0] + r.2[0], acc[1] + r.2[1]]),
            }
        })
        .collect())
}

/// 95% interval; a single sample gives a zero-width interval.
fn ci(samples: &[f64]) -> ConfidenceInterval {
    stats::confidence_interval(samples, 0.95).unwrap_or(ConfidenceInterval {
        mean: samples.first().copied().unwrap_or(f64::NAN),
        half_width: 0.0,
    })
}

// ---------------------------------------------------------------------------
// Small-scale clique

pub const CLIQUE_POLICIES: [PolicyKind; 3] = [PolicyKind::Est, PolicyKind::Rr, PolicyKind::Legacy];
pub const CLIQUE_OTHERS: [usize; 4] = [1, 2, 3, 4];
/// Pictures from 320x240 to 1280x768.
pub const CLIQUE_SIZES: [u64; 4] = [20_000, 60_000, 100_000, 150_000];
/// Request rate of each roaming client, per second.
pub const OTHER_RATE: f64 = 4.0;

pub fn clique_scenario(others: usize, policy: PolicyKind) -> Scenario {
    let nodes = 4;
    let computers = (0..nodes)
        .map(|i| {
            computer(
                &format!("e{i}"),
                i + 1,
                8e9,
                vec![container("face", 8, 0.05, 3e-6, 20e6, 200.0)],
            )
        })
        .collect();
    let mut clients: Vec<ClientSpec> = (0..nodes)
        .map(|i| ClientSpec {
            name: format!("tagged{i}"),
            node: format!("c{i}_0"),
            dispatcher: None,
            tagged: true,
            arrivals: Arrivals::Poisson { rate: 1.0 },
            requests: requests("face", &[60_000]),
            roaming: None,
        })
        .collect();
    for j in 0..others {
        clients.push(ClientSpec {
            name: format!("other{j}"),
            node: format!("c{}_1", j % nodes),
            dispatcher: None,
            tagged: false,
            arrivals: Arrivals::Poisson { rate: OTHER_RATE },
            requests: requests("face", &CLIQUE_SIZES),
            roaming: Some(RoamingSpec {
                nodes: (0..nodes).map(|i| format!("c{i}_1")).collect(),
                interval: 10.0,
            }),
        });
    }
    let params = CliqueParams {
        clients_per_node: 2,
        ..CliqueParams::new(nodes)
    };
    Scenario {
        name: format!("clique-{others}-{policy}"),
        seed: 1,
        duration: 200.0,
        warmup_fraction: 0.1,
        topology: TopologySpec::Clique(params),
        classes: vec![face_class("face")],
        computers,
        policy: PolicyConfig::new(policy, EstimatorParams::with_buckets(CLIQUE_SIZES.to_vec())),
        dispatcher_overhead: 0.0,
        probe_overhead: 0.0,
        root: "e0".into(),
        clients,
        sessions: None,
        background: vec![],
        load_sample_interval: 1.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliqueRow {
    pub others: usize,
    pub policy: PolicyKind,
    pub p90: Vec<Seconds>,
    pub p90_ci: ConfidenceInterval,
    /// Mean busy cores of computers e0..e3, one array per replication.
    pub busy_cores: Vec<[f64; 4]>,
}

pub fn clique(opts: &SuiteOptions) -> Result<Vec<CliqueRow>, EngineError> {
    let policies = opts.policies(&CLIQUE_POLICIES);
    let mut configs = Vec::new();
    let mut jobs = Vec::new();
    for others in CLIQUE_OTHERS {
        for &policy in &policies {
            configs.push((others, policy));
            let s = opts.apply(clique_scenario(others, policy));
            for rep in 0..opts.reps {
                jobs.push((s.clone(), opts.rep_seed(rep)));
            }
        }
    }
    let digests = run_all(&jobs, opts.parallel, |out| {
        let p90 = out.delay_percentile(90.0).unwrap_or(f64::NAN);
        let mut busy = [0.0; 4];
        for (b, c) in busy.iter_mut().zip(&out.computers) {
            *b = c.mean_busy_cores;
        }
        (p90, busy)
    })?;
    Ok(configs
        .into_iter()
        .zip(digests.chunks(opts.reps.max(1)))
        .map(|((others, policy), reps)| {
            let p90: Vec<f64> = reps.iter().map(|r| r.0).collect();
            CliqueRow {
                others,
                policy,
                p90_ci: ci(&p90),
                p90,
                busy_cores: reps.iter().map(|r| r.1).collect(),
            }
        })
        .collect())
}

/// Spearman correlation between core count (1..=4) and mean busy cores,
/// pooled over replications.
pub fn load_core_correlation(row: &CliqueRow) -> f64 {
    let mut cores = Vec::new();
    let mut load = Vec::new();
    for rep in &row.busy_cores {
        for (i, l) in rep.iter().enumerate() {
            cores.push((i + 1) as f64);
            load.push(*l);
        }
    }
    stats::spearman(&cores, &load)
}

/// Coefficient of variation of the per-computer mean load (averaged over
/// replications).
pub fn load_spread(row: &CliqueRow) -> f64 {
    let n = row.busy_cores.len().max(1) as f64;
    let mut avg = [0.0; 4];
    for rep in &row.busy_cores {
        for (a, l) in avg.iter_mut().zip(rep) {
            *a += l / n;
        }
    }
    stats::coefficient_of_variation(&avg)
}

// ---------------------------------------------------------------------------
// Large-scale fat tree

pub const FATTREE_POLICIES: [PolicyKind; 4] =
    [PolicyKind::Est, PolicyKind::Centralized, PolicyKind::Probe, PolicyKind::Legacy];

/// Delay target for AR round trips, seconds.
pub const AR_TARGET: Seconds = 0.075;

/// Synthetic city activity: a grid of cells with log-normal relative
/// activity and a shared time-of-day profile at 10-minute granularity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateMap {
    pub width: usize,
    pub height: usize,
    /// Relative activity of cell `y * width + x`.
    pub activity: Vec<f64>,
    /// Multiplier per 10-minute slot of the day.
    pub daily: Vec<f64>,
}

impl RateMap {
    pub fn uniform(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            activity: vec![1.0; width * height],
            daily: vec![1.0],
        }
    }

    /// Log-normal spatial activity (mean 1) with a day/night cycle between
    /// 20% and 100%.
    pub fn synthetic(width: usize, height: usize, seed: u64) -> Self {
        let mut rng = rng_stream(seed, 0);
        let sigma: f64 = 0.8;
        let ln = LogNormal::new(-sigma * sigma / 2.0, sigma).expect("valid parameters");
        let activity = (0..width * height).map(|_| ln.sample(&mut rng)).collect();
        let daily = (0..144)
            .map(|slot| {
                let hour = slot as f64 / 6.0;
                // Trough at 4 am, peak at 4 pm.
                0.6 - 0.4 * (2.0 * std::f64::consts::PI * (hour - 4.0) / 24.0).cos()
            })
            .collect();
        Self {
            width,
            height,
            activity,
            daily,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.width < 3 || self.height < 3 {
            return Err("rate map must be at least 3x3".into());
        }
        if self.activity.len() != self.width * self.height || self.daily.is_empty() {
            return Err("rate map dimensions do not match its data".into());
        }
        if self.activity.iter().chain(&self.daily).any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err("rate map values must be finite and non-negative".into());
        }
        Ok(())
    }
}

/// Sessions per second per unit of activity.
pub const SESSION_RATE_SCALE: f64 = 0.05;

/// The fat-tree scenario without sessions: 3 pods of 3 base stations, each
/// with a two-core computer.
pub fn fattree_base(policy: PolicyKind) -> Scenario {
    let params = FatTreeParams::new(3, 3);
    let bs = params.pods * params.bs_per_pod;
    let computers = (0..bs)
        .map(|i| computer(&format!("bs{i}"), 2, 8e9, vec![container("ar", 16, 0.004, 1e-6, 0.0, 0.0)]))
        .collect();
    // 1000-byte quantization over the request size range.
    let buckets = (5..=15).map(|k| k * 1000).collect();
    Scenario {
        name: format!("fattree-{policy}"),
        seed: 1,
        duration: 40.0,
        warmup_fraction: 0.1,
        topology: TopologySpec::FatTree(params),
        classes: vec![ClassSpec::new("ar")],
        computers,
        policy: PolicyConfig::new(policy, EstimatorParams::with_buckets(buckets)),
        dispatcher_overhead: 0.0,
        probe_overhead: 0.0,
        root: "root".into(),
        clients: vec![],
        sessions: None,
        background: vec![],
        load_sample_interval: 1.0,
    }
}

/// One drop: a random 3x3 region and time of day, session rates
/// proportional to cell activity.
pub fn drop_scenario(base: &Scenario, map: &RateMap, rng: &mut impl Rng) -> Scenario {
    let x0 = rng.random_range(0..=map.width - 3);
    let y0 = rng.random_range(0..=map.height - 3);
    let slot = rng.random_range(0..map.daily.len());
    let cells = (0..9)
        .map(|i| {
            let (dx, dy) = (i % 3, i / 3);
            let activity = map.activity[(y0 + dy) * map.width + x0 + dx];
            CellSpec {
                sectors: (0..3).map(|s| format!("bs{i}_s{s}")).collect(),
                rate: SESSION_RATE_SCALE * activity * map.daily[slot],
            }
        })
        .collect();
    let mut s = base.clone();
    s.sessions = Some(SessionWorkload {
        cells,
        period: 0.033,
        duration_min: 30.0,
        duration_max: 60.0,
        class: LambdaClass::new("ar"),
        size_min: 5000,
        size_max: 15000,
        tagged: true,
    });
    s
}

/// Independent drops of `base`, one scenario and seed per drop.
pub fn monte_carlo_drops(
    drop_count: usize,
    base: &Scenario,
    map: &RateMap,
    seed: u64,
) -> Result<Vec<(Scenario, u64)>, String> {
    map.validate()?;
    let mut rng = rng_stream(seed, 7);
    Ok((0..drop_count)
        .map(|d| {
            let mut s = drop_scenario(base, map, &mut rng);
            s.name = format!("{}-drop{d}", base.name);
            (s, rng.random())
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FattreeRow {
    pub policy: PolicyKind,
    /// 90th percentile of delay per drop (NaN if the drop had no sessions).
    pub p90: Vec<Seconds>,
    /// Mean total network throughput per drop, bits per second.
    pub throughput: Vec<f64>,
    /// Fraction of drops whose 90th percentile exceeds the target.
    pub over_target: f64,
    pub mean_throughput: f64,
}

pub fn fattree(opts: &SuiteOptions, map: &RateMap) -> Result<Vec<FattreeRow>, EngineError> {
    let policies = opts.policies(&FATTREE_POLICIES);
    let mut jobs = Vec::new();
    for &policy in &policies {
        let base = opts.apply(fattree_base(policy));
        let drops = monte_carlo_drops(opts.drops, &base, map, opts.seed)
            .map_err(|e| EngineError::Scenario(crate::scenario::ScenarioError::Invalid {
                field: "rate_map".into(),
                message: e,
            }))?;
        jobs.extend(drops);
    }
    let digests = run_all(&jobs, opts.parallel, |out| {
        (out.delay_percentile(90.0).unwrap_or(f64::NAN), out.throughput)
    })?;
    Ok(policies
        .into_iter()
        .zip(digests.chunks(opts.drops.max(1)))
        .map(|(policy, drops)| {
            let p90: Vec<f64> = drops.iter().map(|d| d.0).collect();
            let throughput: Vec<f64> = drops.iter().map(|d| d.1).collect();
            let valid: Vec<f64> = p90.iter().copied().filter(|v| v.is_finite()).collect();
            let over = valid.iter().filter(|&&v| v > AR_TARGET).count();
            FattreeRow {
                policy,
                over_target: over as f64 / valid.len().max(1) as f64,
                mean_throughput: stats::mean(&throughput),
                p90,
                throughput,
            }
        })
        .collect())
}
