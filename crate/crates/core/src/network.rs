//! Simulated communication substrate.
//!
//! Messages travel store-and-forward along static hop-count shortest paths.
//! Each direction of a link is a FIFO: a message waits for the previous one
//! to finish transmitting, occupies the link for `size * 8 / capacity`
//! seconds, then pays the propagation latency. A link direction may carry a
//! periodic background stream that, while on, leaves only a fraction of the
//! capacity to foreground messages.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::types::{NodeId, Seconds};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    Client,
    Dispatcher,
    Computer,
    Switch,
    Root,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub name: String,
    pub role: NodeRole,
}

/// Undirected link between two nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub a: NodeId,
    pub b: NodeId,
    /// Bits per second.
    pub capacity: f64,
    /// Seconds.
    pub latency: f64,
}

/// One direction of a link: `2 * link` is `a -> b`, `2 * link + 1` is `b -> a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DirectedLink(pub usize);

impl DirectedLink {
    pub fn link(self) -> usize {
        self.0 / 2
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetworkError {
    #[error("link {index} references unknown node {node}")]
    UnknownEndpoint { index: usize, node: NodeId },
    #[error("link {index} is a self-loop")]
    SelfLoop { index: usize },
    #[error("link {index} has invalid capacity {capacity} or latency {latency}")]
    InvalidLink { index: usize, capacity: f64, latency: f64 },
    #[error("topology is not connected: {0} cannot be reached")]
    Disconnected(String),
    #[error("duplicate node name {0}")]
    DuplicateName(String),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("no path from {0} to {1}")]
    NoPath(NodeId, NodeId),
    #[error("message source and destination are both {0}")]
    SameEndpoints(NodeId),
    #[error("messages must carry at least one byte")]
    EmptyMessage,
    #[error("invalid topology parameters: {0}")]
    InvalidParams(String),
    #[error("invalid background traffic: {0}")]
    InvalidBackground(String),
}

#[derive(Debug, Clone)]
pub struct Topology {
    nodes: Vec<Node>,
    links: Vec<Link>,
    names: BTreeMap<String, NodeId>,
    /// `next_hop[src][dst]`: neighbor and directed link to use.
    next_hop: Vec<Vec<Option<(NodeId, DirectedLink)>>>,
    hops: Vec<Vec<u32>>,
}

impl Topology {
    pub fn new(nodes: Vec<Node>, links: Vec<Link>) -> Result<Self, NetworkError> {
        let mut names = BTreeMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if names.insert(n.name.clone(), NodeId(i)).is_some() {
                return Err(NetworkError::DuplicateName(n.name.clone()));
            }
        }
        let n = nodes.len();
        for (index, l) in links.iter().enumerate() {
            for node in [l.a, l.b] {
                if node.0 >= n {
                    return Err(NetworkError::UnknownEndpoint { index, node });
                }
            }
            if l.a == l.b {
                return Err(NetworkError::SelfLoop { index });
            }
            if !(l.capacity > 0.0 && l.capacity.is_finite() && l.latency >= 0.0 && l.latency.is_finite()) {
                return Err(NetworkError::InvalidLink {
                    index,
                    capacity: l.capacity,
                    latency: l.latency,
                });
            }
        }
        // Neighbor lists sorted by (neighbor id, link index).
        let mut adjacency: Vec<Vec<(NodeId, DirectedLink)>> = vec![Vec::new(); n];
        for (i, l) in links.iter().enumerate() {
            adjacency[l.a.0].push((l.b, DirectedLink(2 * i)));
            adjacency[l.b.0].push((l.a, DirectedLink(2 * i + 1)));
        }
        for adj in &mut adjacency {
            adj.sort();
        }
        let mut hops = vec![vec![u32::MAX; n]; n];
        let mut next_hop = vec![vec![None; n]; n];
        for dst in 0..n {
            // BFS from the destination gives every node's distance to it.
            let dist = &mut hops;
            dist[dst][dst] = 0;
            let mut queue = VecDeque::from([dst]);
            while let Some(v) = queue.pop_front() {
                let d = dist[v][dst];
                for &(w, _) in &adjacency[v] {
                    if dist[w.0][dst] == u32::MAX {
                        dist[w.0][dst] = d + 1;
                        queue.push_back(w.0);
                    }
                }
            }
            for src in 0..n {
                if src == dst || hops[src][dst] == u32::MAX {
                    continue;
                }
                let want = hops[src][dst] - 1;
                next_hop[src][dst] = adjacency[src]
                    .iter()
                    .find(|(w, _)| hops[w.0][dst] == want)
                    .copied();
            }
        }
        if let Some(unreached) = (0..n).find(|&v| hops[v][0] == u32::MAX) {
            return Err(NetworkError::Disconnected(nodes[unreached].name.clone()));
        }
        Ok(Self {
            nodes,
            links,
            names,
            next_hop,
            hops,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn id(&self, name: &str) -> Result<NodeId, NetworkError> {
        self.names
            .get(name)
            .copied()
            .ok_or_else(|| NetworkError::UnknownNode(name.to_string()))
    }

    pub fn name(&self, id: NodeId) -> &str {
        &self.nodes[id.0].name
    }

    pub fn hop_count(&self, a: NodeId, b: NodeId) -> u32 {
        self.hops[a.0][b.0]
    }

    /// Directed links traversed from `src` to `dst`, in order.
    pub fn path(&self, src: NodeId, dst: NodeId) -> Result<Vec<DirectedLink>, NetworkError> {
        let mut out = Vec::new();
        let mut at = src;
        while at != dst {
            let (next, link) = self.next_hop[at.0][dst.0].ok_or(NetworkError::NoPath(src, dst))?;
            out.push(link);
            at = next;
        }
        Ok(out)
    }

    /// Node reached by traversing `link` in its direction.
    pub fn head(&self, link: DirectedLink) -> NodeId {
        let l = &self.links[link.link()];
        if link.0 % 2 == 0 {
            l.b
        } else {
            l.a
        }
    }

    /// Directed link from `from` to its neighbor `to`, if they are adjacent.
    pub fn directed(&self, from: NodeId, to: NodeId) -> Option<DirectedLink> {
        self.links.iter().enumerate().find_map(|(i, l)| {
            if l.a == from && l.b == to {
                Some(DirectedLink(2 * i))
            } else if l.b == from && l.a == to {
                Some(DirectedLink(2 * i + 1))
            } else {
                None
            }
        })
    }

    /// Sum of latencies and serialization times along the path of an idle
    /// network.
    pub fn idle_delay(&self, src: NodeId, dst: NodeId, size: u64) -> Result<Seconds, NetworkError> {
        Ok(self
            .path(src, dst)?
            .iter()
            .map(|d| {
                let l = &self.links[d.link()];
                size as f64 * 8.0 / l.capacity + l.latency
            })
            .sum())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Request,
    Response,
    Probe,
    ProbeReply,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub size: u64,
    pub src: NodeId,
    pub dst: NodeId,
    pub kind: MessageKind,
}

/// Periodic background stream on one link direction: on for `on` seconds
/// every `period` seconds starting at `offset`, taking `fraction` of the
/// capacity while on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackgroundTraffic {
    pub fraction: f64,
    pub on: Seconds,
    pub period: Seconds,
    #[serde(default)]
    pub offset: Seconds,
}

impl BackgroundTraffic {
    pub fn validate(&self) -> Result<(), NetworkError> {
        if !(0.0..1.0).contains(&self.fraction) {
            return Err(NetworkError::InvalidBackground(format!(
                "fraction must be in [0, 1), got {}",
                self.fraction
            )));
        }
        if !(self.period > 0.0 && self.on >= 0.0 && self.on <= self.period && self.offset >= 0.0) {
            return Err(NetworkError::InvalidBackground(format!(
                "need 0 <= on <= period, period > 0, offset >= 0 (on={}, period={}, offset={})",
                self.on, self.period, self.offset
            )));
        }
        Ok(())
    }

    /// Time at which `bits` of foreground data finish transmitting when the
    /// transmission starts at `start` on a link of `capacity` bits/s.
    fn finish(&self, start: Seconds, bits: f64, capacity: f64) -> Seconds {
        let mut t = start;
        let mut remaining = bits;
        let reduced = capacity * (1.0 - self.fraction);
        loop {
            let (rate, until) = if t < self.offset {
                (capacity, self.offset)
            } else {
                let cycle = ((t - self.offset) / self.period).floor();
                let cycle_start = self.offset + cycle * self.period;
                let x = t - cycle_start;
                if x < self.on {
                    (reduced, cycle_start + self.on)
                } else {
                    (capacity, cycle_start + self.period)
                }
            };
            // Guard against `until` not moving past `t` due to rounding.
            let until = if until <= t { t + self.period * 1e-12 } else { until };
            let can = rate * (until - t);
            if remaining <= can {
                return t + remaining / rate;
            }
            remaining -= can;
            t = until;
        }
    }

    /// Seconds the stream is on within `[from, to]`.
    pub fn on_time(&self, from: Seconds, to: Seconds) -> Seconds {
        if to <= from {
            return 0.0;
        }
        let on_before = |t: Seconds| -> Seconds {
            if t <= self.offset {
                return 0.0;
            }
            let x = t - self.offset;
            let cycles = (x / self.period).floor();
            cycles * self.on + (x - cycles * self.period).min(self.on)
        };
        on_before(to) - on_before(from)
    }
}

/// Runtime state of the links: FIFO occupancy and byte counters.
#[derive(Debug, Clone)]
pub struct Network {
    topology: Arc<Topology>,
    busy_until: Vec<Seconds>,
    background: Vec<Option<BackgroundTraffic>>,
    bytes: Vec<u64>,
    counting: bool,
}

/// Throughput over a measurement interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThroughputReport {
    /// Foreground bits per second on each (undirected) link.
    pub per_link: Vec<f64>,
    /// Sum over links of `per_link`.
    pub total: f64,
    /// Background bits per second summed over links.
    pub background: f64,
}

impl Network {
    pub fn new(topology: Arc<Topology>) -> Self {
        let links = topology.links().len();
        Self {
            topology,
            busy_until: vec![f64::NEG_INFINITY; 2 * links],
            background: vec![None; 2 * links],
            bytes: vec![0; links],
            counting: true,
        }
    }

    pub fn topology(&self) -> &Arc<Topology> {
        &self.topology
    }

    pub fn set_background(&mut self, link: DirectedLink, traffic: BackgroundTraffic) -> Result<(), NetworkError> {
        traffic.validate()?;
        self.background[link.0] = Some(traffic);
        Ok(())
    }

    /// Enables or disables byte accounting for throughput.
    pub fn set_counting(&mut self, on: bool) {
        self.counting = on;
    }

    pub fn reset_counters(&mut self) {
        self.bytes.iter_mut().for_each(|b| *b = 0);
    }

    pub fn link_bytes(&self) -> &[u64] {
        &self.bytes
    }

    /// Enqueues `size` bytes on one link direction at `now`; returns the
    /// arrival time at the far end.
    pub fn send_hop(&mut self, link: DirectedLink, size: u64, now: Seconds) -> Seconds {
        let l = &self.topology.links()[link.link()];
        let start = now.max(self.busy_until[link.0]);
        let bits = size as f64 * 8.0;
        let done = match &self.background[link.0] {
            Some(bg) => bg.finish(start, bits, l.capacity),
            None => start + bits / l.capacity,
        };
        self.busy_until[link.0] = done;
        if self.counting {
            self.bytes[link.link()] += size;
        }
        done + l.latency
    }

    /// Sends `msg` along its whole path starting at `now` and returns the
    /// delivery time. Valid when no other message interleaves on the path
    /// meanwhile; the engine forwards hop by hop instead.
    pub fn transfer(&mut self, msg: &Message, now: Seconds) -> Result<Seconds, NetworkError> {
        if msg.size == 0 {
            return Err(NetworkError::EmptyMessage);
        }
        if msg.src == msg.dst {
            return Err(NetworkError::SameEndpoints(msg.src));
        }
        let path = self.topology.path(msg.src, msg.dst)?;
        let mut t = now;
        for link in path {
            t = self.send_hop(link, msg.size, t);
        }
        Ok(t)
    }

    /// Throughput implied by the counters accumulated over `interval`
    /// seconds, the background streams being measured over `[from, to]`.
    pub fn throughput(&self, from: Seconds, to: Seconds) -> ThroughputReport {
        let interval = to - from;
        if !(interval > 0.0) {
            return ThroughputReport {
                per_link: vec![0.0; self.bytes.len()],
                total: 0.0,
                background: 0.0,
            };
        }
        let per_link: Vec<f64> = self
            .bytes
            .iter()
            .map(|&b| b as f64 * 8.0 / interval)
            .collect();
        let total = per_link.iter().sum();
        let background = self
            .background
            .iter()
            .enumerate()
            .filter_map(|(d, bg)| bg.map(|bg| (d, bg)))
            .map(|(d, bg)| {
                let cap = self.topology.links()[d / 2].capacity;
                bg.fraction * cap * bg.on_time(from, to) / interval
            })
            .sum();
        ThroughputReport {
            per_link,
            total,
            background,
        }
    }
}

fn node(name: impl Into<String>, role: NodeRole) -> Node {
    Node {
        name: name.into(),
        role,
    }
}

fn link(a: usize, b: usize, capacity: f64, latency: f64) -> Link {
    Link {
        a: NodeId(a),
        b: NodeId(b),
        capacity,
        latency,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CliqueParams {
    /// Edge nodes, each hosting a dispatcher and a computer.
    pub n: usize,
    #[serde(default = "CliqueParams::default_capacity")]
    pub capacity: f64,
    #[serde(default = "CliqueParams::default_latency")]
    pub latency: f64,
    #[serde(default = "CliqueParams::default_access_capacity")]
    pub access_capacity: f64,
    #[serde(default = "CliqueParams::default_access_latency")]
    pub access_latency: f64,
    /// Client attachment points per edge node.
    #[serde(default = "CliqueParams::default_clients")]
    pub clients_per_node: usize,
}

impl CliqueParams {
    fn default_capacity() -> f64 {
        100e6
    }
    fn default_latency() -> f64 {
        1e-6
    }
    fn default_access_capacity() -> f64 {
        25e6
    }
    fn default_access_latency() -> f64 {
        100e-6
    }
    fn default_clients() -> usize {
        1
    }

    pub fn new(n: usize) -> Self {
        Self {
            n,
            capacity: Self::default_capacity(),
            latency: Self::default_latency(),
            access_capacity: Self::default_access_capacity(),
            access_latency: Self::default_access_latency(),
            clients_per_node: Self::default_clients(),
        }
    }
}

/// Edge nodes `e0..e{n-1}` fully meshed; client nodes `c{i}_{j}` attached
/// to edge node `i`.
pub fn build_clique(p: &CliqueParams) -> Result<Topology, NetworkError> {
    if p.n < 2 {
        return Err(NetworkError::InvalidParams("a clique needs at least two nodes".into()));
    }
    let mut nodes: Vec<Node> = (0..p.n).map(|i| node(format!("e{i}"), NodeRole::Dispatcher)).collect();
    let mut links = Vec::new();
    for i in 0..p.n {
        for j in i + 1..p.n {
            links.push(link(i, j, p.capacity, p.latency));
        }
    }
    for i in 0..p.n {
        for j in 0..p.clients_per_node {
            nodes.push(node(format!("c{i}_{j}"), NodeRole::Client));
            links.push(link(nodes.len() - 1, i, p.access_capacity, p.access_latency));
        }
    }
    Topology::new(nodes, links)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FatTreeParams {
    pub pods: usize,
    pub bs_per_pod: usize,
    #[serde(default = "FatTreeParams::default_root_capacity")]
    pub root_capacity: f64,
    #[serde(default = "FatTreeParams::default_root_latency")]
    pub root_latency: f64,
    /// Client nodes (sectors) per base station.
    #[serde(default = "FatTreeParams::default_sectors")]
    pub sectors_per_bs: usize,
    #[serde(default = "FatTreeParams::default_client_capacity")]
    pub client_capacity: f64,
    #[serde(default = "FatTreeParams::default_client_latency")]
    pub client_latency: f64,
}

impl FatTreeParams {
    fn default_root_capacity() -> f64 {
        1e9
    }
    fn default_root_latency() -> f64 {
        10e-6
    }
    fn default_sectors() -> usize {
        3
    }
    fn default_client_capacity() -> f64 {
        25e6
    }
    fn default_client_latency() -> f64 {
        1e-3
    }

    pub fn new(pods: usize, bs_per_pod: usize) -> Self {
        Self {
            pods,
            bs_per_pod,
            root_capacity: Self::default_root_capacity(),
            root_latency: Self::default_root_latency(),
            sectors_per_bs: Self::default_sectors(),
            client_capacity: Self::default_client_capacity(),
            client_latency: Self::default_client_latency(),
        }
    }
}

/// `root`, aggregators `pod{p}`, base stations `bs{i}` numbered across pods,
/// and sector client nodes `bs{i}_s{s}`. Links below the aggregators run at
/// half the root-tier capacity.
pub fn build_fat_tree(p: &FatTreeParams) -> Result<Topology, NetworkError> {
    if p.pods == 0 || p.bs_per_pod == 0 {
        return Err(NetworkError::InvalidParams("pods and bs_per_pod must be positive".into()));
    }
    let mut nodes = vec![node("root", NodeRole::Root)];
    let mut links = Vec::new();
    for pod in 0..p.pods {
        nodes.push(node(format!("pod{pod}"), NodeRole::Switch));
        links.push(link(0, nodes.len() - 1, p.root_capacity, p.root_latency));
    }
    for pod in 0..p.pods {
        for b in 0..p.bs_per_pod {
            let i = pod * p.bs_per_pod + b;
            nodes.push(node(format!("bs{i}"), NodeRole::Dispatcher));
            links.push(link(1 + pod, nodes.len() - 1, p.root_capacity / 2.0, p.root_latency));
        }
    }
    let first_bs = 1 + p.pods;
    for i in 0..p.pods * p.bs_per_pod {
        for s in 0..p.sectors_per_bs {
            nodes.push(node(format!("bs{i}_s{s}"), NodeRole::Client));
            links.push(link(first_bs + i, nodes.len() - 1, p.client_capacity, p.client_latency));
        }
    }
    Topology::new(nodes, links)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumbbellParams {
    #[serde(default = "DumbbellParams::default_thick_capacity")]
    pub thick_capacity: f64,
    #[serde(default = "DumbbellParams::default_thick_latency")]
    pub thick_latency: f64,
    #[serde(default = "DumbbellParams::default_thin_capacity")]
    pub thin_capacity: f64,
    #[serde(default = "DumbbellParams::default_thin_latency")]
    pub thin_latency: f64,
    /// Interfering clients attached to each of the two edge nodes.
    #[serde(default)]
    pub interferers_per_side: usize,
}

impl DumbbellParams {
    fn default_thick_capacity() -> f64 {
        100e6
    }
    fn default_thick_latency() -> f64 {
        1e-6
    }
    fn default_thin_capacity() -> f64 {
        25e6
    }
    fn default_thin_latency() -> f64 {
        100e-6
    }

    pub fn new(interferers_per_side: usize) -> Self {
        Self {
            thick_capacity: Self::default_thick_capacity(),
            thick_latency: Self::default_thick_latency(),
            thin_capacity: Self::default_thin_capacity(),
            thin_latency: Self::default_thin_latency(),
            interferers_per_side,
        }
    }
}

/// `root` linked by thick links to edge nodes `lhs` and `rhs`; the tagged
/// client `tagged` hangs off the root and interfering clients `lhs_c{i}` /
/// `rhs_c{i}` off their edge node, all by thin links. Link 0 is root-lhs.
pub fn build_dumbbell_het(p: &DumbbellParams) -> Result<Topology, NetworkError> {
    let mut nodes = vec![
        node("root", NodeRole::Root),
        node("lhs", NodeRole::Computer),
        node("rhs", NodeRole::Computer),
        node("tagged", NodeRole::Client),
    ];
    let mut links = vec![
        link(0, 1, p.thick_capacity, p.thick_latency),
        link(0, 2, p.thick_capacity, p.thick_latency),
        link(3, 0, p.thin_capacity, p.thin_latency),
    ];
    for (side, edge) in [("lhs", 1), ("rhs", 2)] {
        for i in 0..p.interferers_per_side {
            nodes.push(node(format!("{side}_c{i}"), NodeRole::Client));
            links.push(link(nodes.len() - 1, edge, p.thin_capacity, p.thin_latency));
        }
    }
    Topology::new(nodes, links)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(capacity: f64, latency: f64) -> Topology {
        Topology::new(
            vec![node("a", NodeRole::Client), node("b", NodeRole::Computer)],
            vec![link(0, 1, capacity, latency)],
        )
        .unwrap()
    }

    fn msg(size: u64) -> Message {
        Message {
            size,
            src: NodeId(0),
            dst: NodeId(1),
            kind: MessageKind::Request,
        }
    }

    #[test]
    fn transfer_adds_serialization_and_latency() {
        let mut net = Network::new(Arc::new(pair(100e6, 1e-6)));
        let t = net.transfer(&msg(12500), 0.0).unwrap();
        assert!((t - 1.001e-3).abs() < 1e-15);
        let mut net = Network::new(Arc::new(pair(100e6, 1e-6)));
        let t = net.transfer(&msg(1), 0.0).unwrap();
        assert!((t - (8e-8 + 1e-6)).abs() < 1e-18);
    }

    #[test]
    fn fifo_serializes_simultaneous_messages() {
        let mut net = Network::new(Arc::new(pair(100e6, 1e-6)));
        let t1 = net.transfer(&msg(12500), 0.0).unwrap();
        let t2 = net.transfer(&msg(12500), 0.0).unwrap();
        assert!((t2 - t1 - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn directions_are_independent() {
        let mut net = Network::new(Arc::new(pair(100e6, 0.0)));
        let t1 = net.transfer(&msg(12500), 0.0).unwrap();
        let back = Message {
            src: NodeId(1),
            dst: NodeId(0),
            ..msg(12500)
        };
        let t2 = net.transfer(&back, 0.0).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn invalid_messages_rejected() {
        let mut net = Network::new(Arc::new(pair(100e6, 0.0)));
        assert_eq!(net.transfer(&msg(0), 0.0), Err(NetworkError::EmptyMessage));
        let m = Message {
            dst: NodeId(0),
            ..msg(1)
        };
        assert_eq!(net.transfer(&m, 0.0), Err(NetworkError::SameEndpoints(NodeId(0))));
    }

    #[test]
    fn invalid_topologies_rejected() {
        let nodes = || vec![node("a", NodeRole::Client), node("b", NodeRole::Client), node("c", NodeRole::Client)];
        assert!(matches!(
            Topology::new(nodes(), vec![link(0, 1, 1.0, 0.0)]),
            Err(NetworkError::Disconnected(_))
        ));
        assert!(matches!(
            Topology::new(nodes(), vec![link(0, 1, 0.0, 0.0), link(1, 2, 1.0, 0.0)]),
            Err(NetworkError::InvalidLink { .. })
        ));
        assert!(matches!(
            Topology::new(nodes(), vec![link(0, 0, 1.0, 0.0)]),
            Err(NetworkError::SelfLoop { .. })
        ));
        assert!(matches!(
            Topology::new(nodes(), vec![link(0, 5, 1.0, 0.0)]),
            Err(NetworkError::UnknownEndpoint { .. })
        ));
        let dup = vec![node("a", NodeRole::Client), node("a", NodeRole::Client)];
        assert!(matches!(
            Topology::new(dup, vec![link(0, 1, 1.0, 0.0)]),
            Err(NetworkError::DuplicateName(_))
        ));
    }

    #[test]
    fn routing_breaks_ties_by_lowest_neighbor() {
        // Square 0-1-3, 0-2-3: both two hops, next hop from 0 must be 1.
        let nodes = (0..4).map(|i| node(format!("n{i}"), NodeRole::Switch)).collect();
        let links = vec![link(0, 2, 1.0, 0.0), link(2, 3, 1.0, 0.0), link(0, 1, 1.0, 0.0), link(1, 3, 1.0, 0.0)];
        let t = Topology::new(nodes, links).unwrap();
        let path = t.path(NodeId(0), NodeId(3)).unwrap();
        assert_eq!(path.len(), 2);
        assert_eq!(t.head(path[0]), NodeId(1));
        assert_eq!(t.hop_count(NodeId(0), NodeId(3)), 2);
        assert!(t.path(NodeId(2), NodeId(2)).unwrap().is_empty());
    }

    #[test]
    fn clique_shape() {
        let t = build_clique(&CliqueParams::new(4)).unwrap();
        let mesh = t.links().iter().filter(|l| l.capacity == 100e6).count();
        assert_eq!(mesh, 6);
        assert_eq!(t.links().len(), 6 + 4);
        let t = build_clique(&CliqueParams::new(2)).unwrap();
        assert_eq!(t.links().iter().filter(|l| l.capacity == 100e6).count(), 1);
        for n in 2..8 {
            let mut p = CliqueParams::new(n);
            p.clients_per_node = 0;
            assert_eq!(build_clique(&p).unwrap().links().len(), n * (n - 1) / 2);
        }
        assert!(build_clique(&CliqueParams::new(1)).is_err());
        let t = build_clique(&CliqueParams::new(4)).unwrap();
        let c = t.id("c2_0").unwrap();
        assert_eq!(t.hop_count(c, t.id("e2").unwrap()), 1);
        assert_eq!(t.hop_count(c, t.id("e0").unwrap()), 2);
    }

    #[test]
    fn fat_tree_shape() {
        let t = build_fat_tree(&FatTreeParams::new(3, 3)).unwrap();
        let count = |role| t.nodes().iter().filter(|n| n.role == role).count();
        assert_eq!(count(NodeRole::Root), 1);
        assert_eq!(count(NodeRole::Switch), 3);
        assert_eq!(count(NodeRole::Dispatcher), 9);
        assert_eq!(count(NodeRole::Client), 27);
        let root = t.id("root").unwrap();
        let pod = t.id("pod0").unwrap();
        let bs = t.id("bs0").unwrap();
        let up = t.directed(root, pod).unwrap();
        let down = t.directed(pod, bs).unwrap();
        assert_eq!(t.links()[up.link()].capacity, 1e9);
        assert_eq!(t.links()[down.link()].capacity, 5e8);
        assert_eq!(t.links()[down.link()].latency, 10e-6);
        let sector = t.id("bs4_s2").unwrap();
        assert_eq!(t.links()[t.directed(sector, t.id("bs4").unwrap()).unwrap().link()].capacity, 25e6);
        assert_eq!(t.hop_count(t.id("bs0").unwrap(), t.id("bs8").unwrap()), 4);
        assert_eq!(t.hop_count(t.id("bs0").unwrap(), t.id("bs1").unwrap()), 2);

        let mut p = FatTreeParams::new(1, 1);
        p.sectors_per_bs = 0;
        let chain = build_fat_tree(&p).unwrap();
        assert_eq!(chain.nodes().len(), 3);
        assert_eq!(chain.links().len(), 2);
        assert!(build_fat_tree(&FatTreeParams::new(0, 3)).is_err());
    }

    #[test]
    fn dumbbell_shape() {
        let t = build_dumbbell_het(&DumbbellParams::new(2)).unwrap();
        let root = t.id("root").unwrap();
        let lhs = t.id("lhs").unwrap();
        assert_eq!(t.directed(root, lhs).unwrap().link(), 0);
        assert_eq!(t.hop_count(t.id("tagged").unwrap(), lhs), 2);
        assert_eq!(t.hop_count(t.id("tagged").unwrap(), t.id("rhs").unwrap()), 2);
        assert_eq!(t.hop_count(t.id("lhs_c1").unwrap(), lhs), 1);
        assert_eq!(t.hop_count(t.id("rhs_c0").unwrap(), lhs), 3);
        let baseline = build_dumbbell_het(&DumbbellParams::new(0)).unwrap();
        assert_eq!(baseline.nodes().len(), 4);
        assert_eq!(baseline.links().len(), 3);
    }

    #[test]
    fn background_reduces_capacity_while_on() {
        let bg = BackgroundTraffic {
            fraction: 0.8,
            on: 3.0,
            period: 5.0,
            offset: 0.0,
        };
        // 1000 bits at 1000 b/s: 5 s while on (200 b/s) spans into the off phase.
        // 3 s on carry 600 bits, the remaining 400 take 0.4 s at full rate.
        assert!((bg.finish(0.0, 1000.0, 1000.0) - 3.4).abs() < 1e-12);
        assert!((bg.finish(3.5, 100.0, 1000.0) - 3.6).abs() < 1e-12);
        assert!((bg.on_time(0.0, 10.0) - 6.0).abs() < 1e-12);
        assert!((bg.on_time(2.0, 6.0) - 2.0).abs() < 1e-12);

        let mut net = Network::new(Arc::new(pair(1000.0, 0.0)));
        net.set_background(DirectedLink(0), bg).unwrap();
        assert!((net.transfer(&msg(125), 0.0).unwrap() - 3.4).abs() < 1e-12);
        let rep = net.throughput(0.0, 10.0);
        assert!((rep.background - 0.8 * 1000.0 * 0.6).abs() < 1e-9);
        assert!(net
            .set_background(DirectedLink(1), BackgroundTraffic { fraction: 1.0, ..bg })
            .is_err());
    }

    #[test]
    fn throughput_counts_bytes_per_link() {
        let mut net = Network::new(Arc::new(pair(100e6, 0.0)));
        assert_eq!(net.throughput(0.0, 1.0).total, 0.0);
        net.transfer(&msg(1_000_000), 0.0).unwrap();
        let rep = net.throughput(0.0, 1.0);
        assert_eq!(rep.per_link, vec![8e6]);
        assert_eq!(rep.total, 8e6);
        net.set_counting(false);
        net.transfer(&msg(1_000_000), 0.0).unwrap();
        assert_eq!(net.throughput(0.0, 1.0).total, 8e6);
    }
}
