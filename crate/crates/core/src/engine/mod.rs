//! Discrete-event loop binding clients, dispatchers, the network and the
//! simulated computers.

pub mod event;
pub mod output;
pub mod workload;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::estimator::{EstimatorError, Score};
use crate::network::{DirectedLink, Network, NetworkError, Topology};
use crate::policies::{legacy_select, probe_select, rpi_profile, PolicyKind, PolicyState};
use crate::scenario::{hosts_dispatcher, Scenario, ScenarioError};
use crate::simcomputer::{Completion, SimComputer, SimError, TaskId};
use crate::stats;
use crate::types::{LambdaClass, LambdaRequest, LambdaResponse, NodeId, ReturnCode, Seconds, TransactionError, TransactionRecord};

use event::{EventKind, EventQueue};
use workload::{pick, Arrivals, RequestChoice};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("computer {computer}: {source}")]
    Computer { computer: String, source: SimError },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Transaction(#[from] TransactionError),
}

/// Request/response counters over the whole run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub issued: u64,
    pub ok: u64,
    pub no_destination: u64,
    pub dropped: u64,
}

/// One lambda transaction with its timing decomposition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransactionRow {
    pub id: usize,
    pub client: String,
    pub class: LambdaClass,
    pub size: u64,
    pub issue_time: Seconds,
    pub code: ReturnCode,
    pub dispatcher: String,
    pub executor: Option<String>,
    /// Client-measured delay; `None` unless the code is ok or no_destination.
    pub delay: Option<Seconds>,
    pub uplink: Seconds,
    pub dispatch: Seconds,
    pub forward: Seconds,
    pub queueing: Seconds,
    pub execution: Seconds,
    pub back: Seconds,
    pub downlink: Seconds,
    /// Processing time reported by the executor (queueing plus execution).
    pub p: Seconds,
    /// Communication latency: delay minus `p`.
    pub tau: Seconds,
    /// Load reported by the executor.
    pub u: f64,
    pub est_tau: Option<Seconds>,
    pub est_p: Option<Seconds>,
    pub tagged: bool,
    /// Issued after the warm-up.
    pub measured: bool,
    /// First transaction of the chain this one belongs to.
    pub chain_root: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoadSample {
    pub time: Seconds,
    pub computer: String,
    pub load: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComputerSummary {
    pub name: String,
    pub cores: usize,
    /// Busy core-seconds over the measurement window.
    pub busy_core_seconds: f64,
    /// Average number of busy cores over the measurement window.
    pub mean_busy_cores: f64,
    /// `mean_busy_cores / cores`.
    pub utilization: f64,
    /// Transactions executed over the whole run.
    pub executed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkSummary {
    pub a: String,
    pub b: String,
    pub bytes: u64,
    /// Foreground bits per second over the measurement window.
    pub throughput: f64,
}

/// Everything measured in one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunOutput {
    pub scenario: Scenario,
    pub seed: u64,
    pub config_hash: String,
    pub counts: Counts,
    /// Response times of tagged jobs issued after the warm-up, in completion
    /// order. A job is a transaction plus its chained follow-up, if any.
    pub delays: Vec<Seconds>,
    pub transactions: Vec<TransactionRow>,
    pub loads: Vec<LoadSample>,
    pub computers: Vec<ComputerSummary>,
    pub links: Vec<LinkSummary>,
    /// Sum of per-link foreground throughput, bits per second.
    pub throughput: f64,
    pub background_throughput: f64,
    /// Candidate scores computed by estimate-based dispatchers.
    pub score_evaluations: u64,
    /// Largest per-computer estimator state seen at the end of the run.
    pub max_stored_samples: usize,
}

impl RunOutput {
    /// Nearest-rank percentile of the tagged delays.
    pub fn delay_percentile(&self, q: f64) -> Option<Seconds> {
        stats::percentile(&self.delays, q).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Leg {
    Uplink,
    Forward,
    Back,
    Downlink,
    Probe(usize),
    ProbeReply(usize),
}

#[derive(Debug)]
struct InFlight {
    txn: usize,
    leg: Leg,
    size: u64,
    path: Vec<DirectedLink>,
    next_hop: usize,
    /// Payload of a probe reply: projected completion delay.
    value: Seconds,
}

#[derive(Debug, Clone)]
struct Txn {
    request: LambdaRequest,
    client: usize,
    client_node: NodeId,
    dispatcher: NodeId,
    tagged: bool,
    measured: bool,
    chain_root: usize,
    t_dispatcher: Seconds,
    t_forward: Seconds,
    t_computer: Seconds,
    t_activation: Seconds,
    t_completion: Seconds,
    t_back: Seconds,
    t_done: Seconds,
    executor: Option<usize>,
    response: Option<LambdaResponse>,
    code: Option<ReturnCode>,
    probes_pending: usize,
    replies: Vec<(NodeId, Seconds)>,
    est_tau: Option<Seconds>,
    est_p: Option<Seconds>,
    /// Sent to a computer the dispatcher had no estimate for.
    exploring: bool,
}

struct Client {
    name: String,
    node: NodeId,
    dispatcher: Option<NodeId>,
    tagged: bool,
    arrivals: Arrivals,
    requests: Vec<RequestChoice>,
    /// Session clients stop issuing at this time.
    end: Seconds,
    roaming: Option<(Vec<NodeId>, Seconds)>,
    gaps: ChaCha8Rng,
    sizes: ChaCha8Rng,
    moves: ChaCha8Rng,
}

struct ComputerSlot {
    node: NodeId,
    sim: SimComputer,
    generation: u64,
    tasks: BTreeMap<TaskId, usize>,
    executed: u64,
    busy_at_warmup: f64,
    busy_at_end: f64,
}

/// Independent random stream `stream` derived from `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const SESSION_STREAM: u64 = 1;
const CLIENT_STREAM_BASE: u64 = 1 << 16;

struct Engine<'a> {
    scenario: &'a Scenario,
    topology: Arc<Topology>,
    network: Network,
    queue: EventQueue,
    now: Seconds,
    warmup: Seconds,
    clients: Vec<Client>,
    computers: Vec<ComputerSlot>,
    computer_at: BTreeMap<NodeId, usize>,
    candidates: BTreeMap<LambdaClass, Vec<NodeId>>,
    default_dispatcher: Vec<Option<NodeId>>,
    dispatchers: BTreeMap<NodeId, PolicyState>,
    /// Exploratory requests in flight per (dispatcher, computer).
    exploring: BTreeMap<(NodeId, NodeId), usize>,
    txns: Vec<Txn>,
    messages: Vec<InFlight>,
    counts: Counts,
    delays: Vec<Seconds>,
    loads: Vec<LoadSample>,
}

/// Runs `scenario` with the given seed (the scenario's own seed is ignored).
pub fn run(scenario: &Scenario, seed: u64) -> Result<RunOutput, EngineError> {
    let mut resolved = scenario.clone();
    resolved.seed = seed;
    let topology = Arc::new(resolved.validate()?);
    let mut engine = Engine::new(&resolved, topology)?;
    engine.simulate()?;
    Ok(engine.finish())
}

impl<'a> Engine<'a> {
    fn new(scenario: &'a Scenario, topology: Arc<Topology>) -> Result<Self, EngineError> {
        let seed = scenario.seed;
        let mut network = Network::new(topology.clone());
        network.set_counting(scenario.warmup() <= 0.0);
        for b in &scenario.background {
            let a = topology.id(&b.a)?;
            let z = topology.id(&b.b)?;
            let forward = topology.directed(a, z).expect("validated adjacency");
            network.set_background(forward, b.traffic)?;
            if b.both_directions {
                let reverse = topology.directed(z, a).expect("validated adjacency");
                network.set_background(reverse, b.traffic)?;
            }
        }

        let mut computers = Vec::new();
        let mut computer_at = BTreeMap::new();
        let mut placements: Vec<_> = scenario
            .computers
            .iter()
            .map(|c| (topology.id(&c.node).expect("validated node"), c))
            .collect();
        placements.sort_by_key(|(id, _)| *id);
        for (node, placement) in placements {
            let sim = SimComputer::new(placement.spec.clone()).map_err(|source| EngineError::Computer {
                computer: placement.node.clone(),
                source,
            })?;
            computer_at.insert(node, computers.len());
            computers.push(ComputerSlot {
                node,
                sim,
                generation: 0,
                tasks: BTreeMap::new(),
                executed: 0,
                busy_at_warmup: 0.0,
                busy_at_end: 0.0,
            });
        }
        let mut candidates: BTreeMap<LambdaClass, Vec<NodeId>> = BTreeMap::new();
        for class in &scenario.classes {
            let offering = computers
                .iter()
                .filter(|c| c.sim.spec().offers(&class.name))
                .map(|c| c.node)
                .collect();
            candidates.insert(class.name.clone(), offering);
        }

        let default_dispatcher = (0..topology.nodes().len())
            .map(|n| default_dispatcher(&topology, NodeId(n)))
            .collect();

        let mut engine = Self {
            scenario,
            topology: topology.clone(),
            network,
            queue: EventQueue::new(),
            now: 0.0,
            warmup: scenario.warmup(),
            clients: Vec::new(),
            computers,
            computer_at,
            candidates,
            default_dispatcher,
            dispatchers: BTreeMap::new(),
            exploring: BTreeMap::new(),
            txns: Vec::new(),
            messages: Vec::new(),
            counts: Counts::default(),
            delays: Vec::new(),
            loads: Vec::new(),
        };

        engine.queue.push(scenario.duration, EventKind::Teardown);
        if engine.warmup > 0.0 {
            engine.queue.push(engine.warmup, EventKind::WarmupEnd);
        }
        engine.queue.push(0.0, EventKind::LoadSample);

        for (i, spec) in scenario.clients.iter().enumerate() {
            let stream = CLIENT_STREAM_BASE + 4 * i as u64;
            let roaming = spec.roaming.as_ref().map(|r| {
                let nodes = r.nodes.iter().map(|n| topology.id(n).expect("validated node")).collect();
                (nodes, r.interval)
            });
            engine.clients.push(Client {
                name: spec.name.clone(),
                node: topology.id(&spec.node)?,
                dispatcher: spec.dispatcher.as_ref().map(|d| topology.id(d)).transpose()?,
                tagged: spec.tagged,
                arrivals: spec.arrivals.clone(),
                requests: spec.requests.clone(),
                end: f64::INFINITY,
                roaming,
                gaps: rng_stream(seed, stream),
                sizes: rng_stream(seed, stream + 1),
                moves: rng_stream(seed, stream + 2),
            });
        }
        if let Some(sessions) = &scenario.sessions {
            let mut rng = rng_stream(seed, SESSION_STREAM);
            let base = engine.clients.len();
            for (j, plan) in sessions.plan(scenario.duration, &mut rng).into_iter().enumerate() {
                let stream = CLIENT_STREAM_BASE + 4 * (base + j) as u64;
                let sector = &sessions.cells[plan.cell].sectors[plan.sector];
                let first = if plan.start >= 0.0 {
                    plan.start
                } else {
                    plan.start + (-plan.start / sessions.period).ceil() * sessions.period
                };
                let index = engine.clients.len();
                engine.clients.push(Client {
                    name: format!("s{j}"),
                    node: topology.id(sector)?,
                    dispatcher: None,
                    tagged: sessions.tagged,
                    arrivals: Arrivals::Periodic {
                        period: sessions.period,
                    },
                    requests: vec![RequestChoice {
                        class: sessions.class.clone(),
                        size: plan.size,
                    }],
                    end: plan.end,
                    roaming: None,
                    gaps: rng_stream(seed, stream),
                    sizes: rng_stream(seed, stream + 1),
                    moves: rng_stream(seed, stream + 2),
                });
                if first < plan.end && first < scenario.duration {
                    engine.queue.push(first, EventKind::Arrival { client: index });
                }
            }
        }
        for i in 0..scenario.clients.len() {
            let client = &mut engine.clients[i];
            let gap = client.arrivals.next_gap(&mut client.gaps);
            if gap < scenario.duration {
                engine.queue.push(gap, EventKind::Arrival { client: i });
            }
            if let Some((_, interval)) = &client.roaming {
                if *interval < scenario.duration {
                    engine.queue.push(*interval, EventKind::Roam { client: i });
                }
            }
        }
        Ok(engine)
    }

    fn simulate(&mut self) -> Result<(), EngineError> {
        while let Some(event) = self.queue.pop() {
            debug_assert!(event.time >= self.now, "event causality");
            self.now = event.time;
            match event.kind {
                EventKind::Arrival { client } => self.on_arrival(client)?,
                EventKind::Delivery { message } => self.on_delivery(message)?,
                EventKind::Send { message } => self.advance_message(message),
                EventKind::Completion { computer, generation } => {
                    if self.computers[computer].generation == generation {
                        self.sync(computer)?;
                    }
                }
                EventKind::DispatchReady { txn } => self.dispatch(txn)?,
                EventKind::LoadSample => {
                    for ci in 0..self.computers.len() {
                        self.sync(ci)?;
                        let slot = &self.computers[ci];
                        self.loads.push(LoadSample {
                            time: self.now,
                            computer: self.topology.name(slot.node).to_string(),
                            load: slot.sim.reported_load(self.now),
                        });
                    }
                    let next = self.now + self.scenario.load_sample_interval;
                    if next < self.scenario.duration {
                        self.queue.push(next, EventKind::LoadSample);
                    }
                }
                EventKind::Roam { client } => {
                    let c = &mut self.clients[client];
                    if let Some((nodes, interval)) = &c.roaming {
                        c.node = *pick(nodes, &mut c.moves);
                        let next = self.now + interval;
                        if next < self.scenario.duration {
                            self.queue.push(next, EventKind::Roam { client });
                        }
                    }
                }
                EventKind::WarmupEnd => {
                    for ci in 0..self.computers.len() {
                        self.sync(ci)?;
                        self.computers[ci].busy_at_warmup = self.computers[ci].sim.busy_core_seconds();
                    }
                    self.network.set_counting(true);
                }
                EventKind::Teardown => {
                    for ci in 0..self.computers.len() {
                        self.sync(ci)?;
                        self.computers[ci].busy_at_end = self.computers[ci].sim.busy_core_seconds();
                    }
                    break;
                }
            }
        }
        Ok(())
    }

    fn dispatcher_of(&self, client: usize) -> NodeId {
        let c = &self.clients[client];
        if self.scenario.policy.kind == PolicyKind::Centralized {
            return self.topology.id(&self.scenario.root).expect("validated root");
        }
        c.dispatcher
            .or(self.default_dispatcher[c.node.0])
            .unwrap_or(c.node)
    }

    fn on_arrival(&mut self, client: usize) -> Result<(), EngineError> {
        let c = &mut self.clients[client];
        let choice = pick(&c.requests, &mut c.sizes).clone();
        let gap = c.arrivals.next_gap(&mut c.gaps);
        let next = self.now + gap;
        if next < self.scenario.duration && next < c.end {
            self.queue.push(next, EventKind::Arrival { client });
        }
        let id = self.txns.len();
        self.issue(client, choice.class, choice.size, id);
        Ok(())
    }

    fn issue(&mut self, client: usize, class: LambdaClass, size: u64, chain_root: usize) {
        let id = self.txns.len();
        let node = self.clients[client].node;
        let dispatcher = self.dispatcher_of(client);
        let measured = if chain_root == id {
            self.now >= self.warmup
        } else {
            self.txns[chain_root].measured
        };
        self.txns.push(Txn {
            request: LambdaRequest::new(class, size, node, self.now),
            client,
            client_node: node,
            dispatcher,
            tagged: self.clients[client].tagged,
            measured,
            chain_root,
            t_dispatcher: f64::NAN,
            t_forward: f64::NAN,
            t_computer: f64::NAN,
            t_activation: f64::NAN,
            t_completion: f64::NAN,
            t_back: f64::NAN,
            t_done: f64::NAN,
            executor: None,
            response: None,
            code: None,
            probes_pending: 0,
            exploring: false,
            replies: Vec::new(),
            est_tau: None,
            est_p: None,
        });
        self.counts.issued += 1;
        self.send(id, Leg::Uplink, node, dispatcher, size, 0.0);
    }

    /// Starts a message from `src` to `dst` at the current time.
    fn send(&mut self, txn: usize, leg: Leg, src: NodeId, dst: NodeId, size: u64, value: Seconds) {
        let path = if src == dst {
            Vec::new()
        } else {
            self.topology.path(src, dst).expect("topologies are connected")
        };
        let id = self.messages.len();
        self.messages.push(InFlight {
            txn,
            leg,
            size,
            path,
            next_hop: 0,
            value,
        });
        self.advance_message(id);
    }

    /// Puts a message on its next link, or delivers it if none is left.
    fn advance_message(&mut self, id: usize) {
        let m = &mut self.messages[id];
        if m.next_hop < m.path.len() {
            let link = m.path[m.next_hop];
            m.next_hop += 1;
            let arrival = self.network.send_hop(link, m.size, self.now);
            self.queue.push(arrival, EventKind::Delivery { message: id });
        } else {
            self.queue.push(self.now, EventKind::Delivery { message: id });
            // Mark as delivered so the Delivery handler does not resend.
            m.next_hop = usize::MAX;
        }
    }

    fn on_delivery(&mut self, id: usize) -> Result<(), EngineError> {
        let m = &self.messages[id];
        if m.next_hop != usize::MAX && m.next_hop < m.path.len() {
            self.advance_message(id);
            return Ok(());
        }
        let (txn, leg, value) = (m.txn, m.leg, m.value);
        // Release the path; messages are never reused.
        self.messages[id].path = Vec::new();
        match leg {
            Leg::Uplink => {
                self.txns[txn].t_dispatcher = self.now;
                if self.scenario.dispatcher_overhead > 0.0 {
                    self.queue
                        .push(self.now + self.scenario.dispatcher_overhead, EventKind::DispatchReady { txn });
                } else {
                    self.dispatch(txn)?;
                }
            }
            Leg::Forward => self.on_forward_arrival(txn)?,
            Leg::Back => self.on_back_arrival(txn)?,
            Leg::Downlink => self.on_downlink_arrival(txn),
            Leg::Probe(ci) => {
                self.sync(ci)?;
                let request = self.txns[txn].request.clone();
                let slot = &self.computers[ci];
                let projected = slot
                    .sim
                    .probe_completion(&request, self.now)
                    .map_err(|source| self.computer_error(ci, source))?;
                let dispatcher = self.txns[txn].dispatcher;
                let reply = self.messages.len();
                let path = if slot.node == dispatcher {
                    Vec::new()
                } else {
                    self.topology.path(slot.node, dispatcher)?
                };
                self.messages.push(InFlight {
                    txn,
                    leg: Leg::ProbeReply(ci),
                    size: self.scenario.policy.probe_size,
                    path,
                    next_hop: 0,
                    value: projected,
                });
                if self.scenario.probe_overhead > 0.0 {
                    self.queue
                        .push(self.now + self.scenario.probe_overhead, EventKind::Send { message: reply });
                } else {
                    self.advance_message(reply);
                }
            }
            Leg::ProbeReply(ci) => {
                let node = self.computers[ci].node;
                let t = &mut self.txns[txn];
                t.replies.push((node, value));
                t.probes_pending -= 1;
                if t.probes_pending == 0 {
                    let target = probe_select(&t.replies).expect("at least one reply");
                    self.forward(txn, target);
                }
            }
        }
        Ok(())
    }

    fn computer_error(&self, ci: usize, source: SimError) -> EngineError {
        EngineError::Computer {
            computer: self.topology.name(self.computers[ci].node).to_string(),
            source,
        }
    }

    fn policy_state(&mut self, dispatcher: NodeId) -> Result<&mut PolicyState, EngineError> {
        if !self.dispatchers.contains_key(&dispatcher) {
            let mut state = PolicyState::new(&self.scenario.policy)?;
            match &mut state {
                PolicyState::Est(est) => {
                    for (class, ks) in &self.candidates {
                        for &k in ks {
                            est.add_offering(k, class.clone());
                        }
                    }
                }
                PolicyState::Rpi(_) => {
                    let weights = rpi_profile(&self.candidates, |k, class| self.profile(dispatcher, k, class));
                    state.set_rpi_weights(&weights);
                }
                _ => {}
            }
            self.dispatchers.insert(dispatcher, state);
        }
        Ok(self.dispatchers.get_mut(&dispatcher).expect("inserted above"))
    }

    /// Zero-load response time of `class` on `computer` as seen from
    /// `dispatcher`: idle network both ways plus processing on an empty
    /// computer.
    fn profile(&self, dispatcher: NodeId, computer: NodeId, class: &LambdaClass) -> Seconds {
        let spec = self.scenario.class(class).expect("validated class");
        let size = spec.profile_size.unwrap_or_else(|| self.smallest_size(class));
        let idle = |a: NodeId, b: NodeId, s: u64| {
            if a == b {
                0.0
            } else {
                self.topology.idle_delay(a, b, s).expect("connected")
            }
        };
        let slot = &self.computers[self.computer_at[&computer]];
        let empty = SimComputer::new(slot.sim.spec().clone()).expect("validated spec");
        let request = LambdaRequest::new(class.clone(), size, dispatcher, 0.0);
        let p = empty.probe_completion(&request, 0.0).unwrap_or(f64::INFINITY);
        idle(dispatcher, computer, size) + p + idle(computer, dispatcher, spec.output_size(size))
    }

    fn smallest_size(&self, class: &LambdaClass) -> u64 {
        let from_clients = self
            .scenario
            .clients
            .iter()
            .flat_map(|c| c.requests.iter())
            .filter(|r| &r.class == class)
            .map(|r| r.size);
        let from_sessions = self
            .scenario
            .sessions
            .iter()
            .filter(|s| &s.class == class)
            .map(|s| s.size_min);
        from_clients.chain(from_sessions).min().unwrap_or(1000)
    }

    fn dispatch(&mut self, txn: usize) -> Result<(), EngineError> {
        let now = self.now;
        let dispatcher = self.txns[txn].dispatcher;
        let class = self.txns[txn].request.class.clone();
        let size = self.txns[txn].request.input_size;
        let candidates = self.candidates.get(&class).cloned().unwrap_or_default();
        if candidates.is_empty() {
            let t = &mut self.txns[txn];
            t.t_forward = now;
            t.code = Some(ReturnCode::NoDestination);
            t.response = Some(LambdaResponse::failed(ReturnCode::NoDestination));
            t.t_back = now;
            let client_node = t.client_node;
            let size = self.scenario.policy.probe_size;
            self.send(txn, Leg::Downlink, dispatcher, client_node, size, 0.0);
            return Ok(());
        }
        let topology = self.topology.clone();
        let exploring = &self.exploring;
        let busy_explorer = |k: NodeId| exploring.get(&(dispatcher, k)).is_some_and(|&n| n > 0);
        let explorers: Vec<NodeId> = candidates.iter().copied().filter(|&k| busy_explorer(k)).collect();
        let mut explores = false;
        let (target, est_tau, est_p) = match self.policy_state(dispatcher)? {
            PolicyState::Est(est) => {
                // A fresh computer already being explored is left out, so
                // one slow computer does not absorb every request until its
                // first response returns.
                let mut pool: Vec<NodeId> = candidates.clone();
                if !explorers.is_empty() {
                    let filtered: Vec<NodeId> = candidates
                        .iter()
                        .copied()
                        .filter(|&k| !(explorers.contains(&k) && matches!(est.score(k, &class, size), Ok(Score::Fresh))))
                        .collect();
                    if !filtered.is_empty() {
                        pool = filtered;
                    }
                }
                let k = est.select(&pool, &class, size, now)?;
                explores = est.score(k, &class, size)? == Score::Fresh;
                let bucket = est.quantize(size);
                let est_tau = est.latency_fit(k).map(|f| f.at(size as f64).max(0.0));
                let est_p = est
                    .ptime_fit(k, &class, bucket)
                    .map(|f| f.at(est.last_load(k)).max(0.0));
                (Some(k), est_tau, est_p)
            }
            PolicyState::Probe => ((candidates.len() == 1).then(|| candidates[0]), None, None),
            PolicyState::Rpi(table) => (
                Some(
                    table
                        .get_mut(&class)
                        .and_then(|w| w.next())
                        .unwrap_or(candidates[0]),
                ),
                None,
                None,
            ),
            PolicyState::Rr(rr) => (rr.select(&class, &candidates), None, None),
            PolicyState::Legacy => (legacy_select(&topology, dispatcher, &candidates), None, None),
        };
        self.txns[txn].est_tau = est_tau;
        self.txns[txn].est_p = est_p;
        if explores {
            let k = target.expect("Est always picks a target");
            self.txns[txn].exploring = true;
            *self.exploring.entry((dispatcher, k)).or_default() += 1;
        }
        match target {
            Some(k) => self.forward(txn, k),
            None => {
                self.txns[txn].probes_pending = candidates.len();
                let probe_size = self.scenario.policy.probe_size;
                for k in candidates {
                    let ci = self.computer_at[&k];
                    self.send(txn, Leg::Probe(ci), dispatcher, k, probe_size, 0.0);
                }
            }
        }
        Ok(())
    }

    fn forward(&mut self, txn: usize, computer: NodeId) {
        let t = &mut self.txns[txn];
        t.t_forward = self.now;
        t.executor = Some(self.computer_at[&computer]);
        let (dispatcher, size) = (t.dispatcher, t.request.input_size);
        self.send(txn, Leg::Forward, dispatcher, computer, size, 0.0);
    }

    fn on_forward_arrival(&mut self, txn: usize) -> Result<(), EngineError> {
        let ci = self.txns[txn].executor.expect("forwarded transactions have an executor");
        self.sync(ci)?;
        self.txns[txn].t_computer = self.now;
        let request = self.txns[txn].request.clone();
        let task = self.computers[ci]
            .sim
            .submit(&request, self.now)
            .map_err(|source| self.computer_error(ci, source))?;
        self.computers[ci].tasks.insert(task, txn);
        self.sync(ci)
    }

    /// Advances computer `ci` to now, sends responses of finished tasks and
    /// schedules the next projected completion.
    fn sync(&mut self, ci: usize) -> Result<(), EngineError> {
        let done = self.computers[ci]
            .sim
            .advance(self.now)
            .map_err(|source| self.computer_error(ci, source))?;
        for completion in done {
            self.on_completion(ci, completion);
        }
        let slot = &mut self.computers[ci];
        slot.generation += 1;
        if let Some(t) = slot.sim.next_completion_time() {
            self.queue.push(
                t.max(self.now),
                EventKind::Completion {
                    computer: ci,
                    generation: slot.generation,
                },
            );
        }
        Ok(())
    }

    fn on_completion(&mut self, ci: usize, c: Completion) {
        let slot = &mut self.computers[ci];
        let txn = slot.tasks.remove(&c.id).expect("every task belongs to a transaction");
        slot.executed += 1;
        let node = slot.node;
        let scenario = self.scenario;
        let class = scenario.class(&c.class).expect("validated class");
        let t = &mut self.txns[txn];
        t.t_activation = c.activation_time;
        t.t_completion = c.completion_time;
        let output = class.output_size(t.request.input_size);
        t.response = Some(LambdaResponse {
            return_code: ReturnCode::Ok,
            output_size: output,
            executor: Some(node),
            processing_time: c.processing_time(),
            reported_load: c.load_at_arrival,
        });
        let dispatcher = t.dispatcher;
        self.send(txn, Leg::Back, node, dispatcher, output, 0.0);
    }

    fn on_back_arrival(&mut self, txn: usize) -> Result<(), EngineError> {
        let now = self.now;
        let t = &mut self.txns[txn];
        t.t_back = now;
        let measured_delay = now - t.t_forward;
        let response = t.response.clone().expect("completed transactions carry a response");
        let request = t.request.clone();
        let (dispatcher, client_node, output) = (t.dispatcher, t.client_node, response.output_size);
        let executor = response.executor.expect("ok responses name the executor");
        if std::mem::take(&mut t.exploring) {
            if let Some(n) = self.exploring.get_mut(&(dispatcher, executor)) {
                *n -= 1;
            }
        }
        match self.dispatchers.get_mut(&dispatcher) {
            Some(PolicyState::Est(est)) => {
                let record = TransactionRecord::new(request, response, measured_delay)?;
                est.house_keeping(&record, now)?;
            }
            Some(PolicyState::Rr(rr)) => rr.observe(executor, measured_delay),
            _ => {}
        }
        self.send(txn, Leg::Downlink, dispatcher, client_node, output, 0.0);
        Ok(())
    }

    fn on_downlink_arrival(&mut self, txn: usize) {
        let now = self.now;
        let t = &mut self.txns[txn];
        t.t_done = now;
        let code = *t.code.get_or_insert(ReturnCode::Ok);
        let (client, root, class, size) = (t.client, t.chain_root, t.request.class.clone(), t.request.input_size);
        match code {
            ReturnCode::Ok => self.counts.ok += 1,
            ReturnCode::NoDestination => self.counts.no_destination += 1,
            ReturnCode::Dropped => unreachable!("drops are assigned at teardown"),
        }
        let scenario = self.scenario;
        let chain = scenario.class(&class).and_then(|c| c.chain.as_ref());
        if code == ReturnCode::Ok && root == txn {
            if let Some(chain) = chain {
                let follow = ((size as f64 * chain.size_ratio).round() as u64).max(1);
                self.issue(client, chain.class.clone(), follow, root);
                return;
            }
        }
        let root_txn = &self.txns[root];
        if code == ReturnCode::Ok && root_txn.tagged && root_txn.measured {
            self.delays.push(now - root_txn.request.issue_time);
        }
    }

    fn finish(mut self) -> RunOutput {
        for t in &mut self.txns {
            if t.code.is_none() {
                t.code = Some(ReturnCode::Dropped);
                self.counts.dropped += 1;
            }
        }
        let rows = self
            .txns
            .iter()
            .enumerate()
            .map(|(id, t)| self.row(id, t))
            .collect();
        let measured = (self.scenario.duration - self.warmup).max(f64::MIN_POSITIVE);
        let computers = self
            .computers
            .iter()
            .map(|c| {
                let busy = c.busy_at_end - c.busy_at_warmup;
                let cores = c.sim.spec().cores;
                ComputerSummary {
                    name: self.topology.name(c.node).to_string(),
                    cores,
                    busy_core_seconds: busy,
                    mean_busy_cores: busy / measured,
                    utilization: busy / measured / cores as f64,
                    executed: c.executed,
                }
            })
            .collect();
        let report = self.network.throughput(self.warmup, self.scenario.duration);
        let links = self
            .topology
            .links()
            .iter()
            .enumerate()
            .map(|(i, l)| LinkSummary {
                a: self.topology.name(l.a).to_string(),
                b: self.topology.name(l.b).to_string(),
                bytes: self.network.link_bytes()[i],
                throughput: report.per_link[i],
            })
            .collect();
        let (score_evaluations, max_stored_samples) = self
            .dispatchers
            .values()
            .filter_map(|d| match d {
                PolicyState::Est(est) => Some(est),
                _ => None,
            })
            .fold((0, 0), |(evals, stored), est| {
                let most = self
                    .computers
                    .iter()
                    .map(|c| est.stored_samples(c.node))
                    .max()
                    .unwrap_or(0);
                (evals + est.score_evaluations(), stored.max(most))
            });
        RunOutput {
            scenario: self.scenario.clone(),
            seed: self.scenario.seed,
            config_hash: self.scenario.config_hash(),
            counts: self.counts,
            delays: self.delays,
            transactions: rows,
            loads: self.loads,
            computers,
            links,
            throughput: report.total,
            background_throughput: report.background,
            score_evaluations,
            max_stored_samples,
        }
    }

    fn row(&self, id: usize, t: &Txn) -> TransactionRow {
        let code = t.code.expect("finalized");
        let span = |a: Seconds, b: Seconds| if a.is_finite() && b.is_finite() { b - a } else { 0.0 };
        let issue = t.request.issue_time;
        let response = t.response.as_ref();
        let p = response.map_or(0.0, |r| r.processing_time);
        let delay = (code != ReturnCode::Dropped).then(|| t.t_done - issue);
        TransactionRow {
            id,
            client: self.clients[t.client].name.clone(),
            class: t.request.class.clone(),
            size: t.request.input_size,
            issue_time: issue,
            code,
            dispatcher: self.topology.name(t.dispatcher).to_string(),
            executor: response
                .and_then(|r| r.executor)
                .map(|k| self.topology.name(k).to_string()),
            delay,
            uplink: span(issue, t.t_dispatcher),
            dispatch: span(t.t_dispatcher, t.t_forward),
            forward: span(t.t_forward, t.t_computer),
            queueing: span(t.t_computer, t.t_activation),
            execution: span(t.t_activation, t.t_completion),
            back: span(t.t_completion, t.t_back),
            downlink: span(t.t_back, t.t_done),
            p,
            tau: delay.map_or(0.0, |d| d - p),
            u: response.map_or(0.0, |r| r.reported_load),
            est_tau: t.est_tau,
            est_p: t.est_p,
            tagged: t.tagged,
            measured: t.measured,
            chain_root: t.chain_root,
        }
    }
}

/// Dispatcher serving clients on `node` by default: the node itself if it
/// can host one, else its lowest-id neighbor that can.
fn default_dispatcher(topology: &Topology, node: NodeId) -> Option<NodeId> {
    if hosts_dispatcher(topology.node(node).role) {
        return Some(node);
    }
    topology
        .links()
        .iter()
        .filter_map(|l| {
            if l.a == node {
                Some(l.b)
            } else if l.b == node {
                Some(l.a)
            } else {
                None
            }
        })
        .filter(|&n| hosts_dispatcher(topology.node(n).role))
        .min()
}
