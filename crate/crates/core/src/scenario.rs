//! Scenario documents: what to build, what to run, and how to measure it.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::workload::{Arrivals, RequestChoice, SessionWorkload};
use crate::network::{
    build_clique, build_dumbbell_het, build_fat_tree, BackgroundTraffic, CliqueParams, DumbbellParams,
    FatTreeParams, Link, Node, NodeRole, Topology,
};
use crate::policies::{PolicyConfig, PolicyKind};
use crate::simcomputer::ComputerSpec;
use crate::types::{LambdaClass, NodeId, Seconds};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("invalid JSON: {0}")]
    Parse(String),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl ToString) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.into(),
        message: message.to_string(),
    }
}

/// Topology builder and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "builder", rename_all = "snake_case")]
pub enum TopologySpec {
    Clique(CliqueParams),
    FatTree(FatTreeParams),
    DumbbellHet(DumbbellParams),
    EdgeList { nodes: Vec<Node>, links: Vec<NamedLink> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedLink {
    pub a: String,
    pub b: String,
    /// Bits per second.
    pub capacity: f64,
    pub latency: Seconds,
}

impl TopologySpec {
    pub fn build(&self) -> Result<Topology, ScenarioError> {
        let built = match self {
            TopologySpec::Clique(p) => build_clique(p),
            TopologySpec::FatTree(p) => build_fat_tree(p),
            TopologySpec::DumbbellHet(p) => build_dumbbell_het(p),
            TopologySpec::EdgeList { nodes, links } => {
                let lookup = |name: &str, i: usize| {
                    nodes
                        .iter()
                        .position(|n| n.name == name)
                        .map(NodeId)
                        .ok_or_else(|| invalid(format!("topology.links[{i}]"), format!("unknown node {name:?}")))
                };
                let mut resolved = Vec::with_capacity(links.len());
                for (i, l) in links.iter().enumerate() {
                    resolved.push(Link {
                        a: lookup(&l.a, i)?,
                        b: lookup(&l.b, i)?,
                        capacity: l.capacity,
                        latency: l.latency,
                    });
                }
                Topology::new(nodes.clone(), resolved)
            }
        };
        built.map_err(|e| invalid("topology", e))
    }
}

fn default_output_ratio() -> f64 {
    1.0
}

/// A lambda function class as seen by clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: LambdaClass,
    /// Response size is `output_offset + output_ratio * input_size` bytes
    /// (at least one byte).
    #[serde(default)]
    pub output_offset: f64,
    #[serde(default = "default_output_ratio")]
    pub output_ratio: f64,
    /// Input size used when profiling computers for weighted round robin;
    /// defaults to the smallest size clients request.
    #[serde(default)]
    pub profile_size: Option<u64>,
    /// Follow-up request issued by the client on every response of this class.
    #[serde(default)]
    pub chain: Option<ChainSpec>,
}

impl ClassSpec {
    pub fn new(name: &str) -> Self {
        Self {
            name: LambdaClass::new(name),
            output_offset: 0.0,
            output_ratio: default_output_ratio(),
            profile_size: None,
            chain: None,
        }
    }

    pub fn output_size(&self, input_size: u64) -> u64 {
        (self.output_offset + self.output_ratio * input_size as f64).round().max(1.0) as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub class: LambdaClass,
    /// Follow-up input size as a fraction of the original input size.
    pub size_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComputerPlacement {
    pub node: String,
    #[serde(flatten)]
    pub spec: ComputerSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoamingSpec {
    /// Attachment points to move between.
    pub nodes: Vec<String>,
    /// Seconds between moves; each move draws a new attachment point uniformly.
    pub interval: Seconds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientSpec {
    pub name: String,
    /// Node the client sits on.
    pub node: String,
    /// Dispatcher node; defaults to the lowest-id neighbor of `node`.
    #[serde(default)]
    pub dispatcher: Option<String>,
    /// Whether this client's delays are measured.
    #[serde(default)]
    pub tagged: bool,
    pub arrivals: Arrivals,
    pub requests: Vec<RequestChoice>,
    #[serde(default)]
    pub roaming: Option<RoamingSpec>,
}

/// Both directions of the link between `a` and `b`, unless
/// `both_directions` is false, in which case only `a -> b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundSpec {
    pub a: String,
    pub b: String,
    pub traffic: BackgroundTraffic,
    #[serde(default = "default_true")]
    pub both_directions: bool,
}

fn default_true() -> bool {
    true
}

fn default_name() -> String {
    "scenario".into()
}

fn default_seed() -> u64 {
    1
}

fn default_warmup() -> f64 {
    0.1
}

fn default_sample_interval() -> Seconds {
    1.0
}

fn default_root() -> String {
    "root".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Simulated seconds, warm-up included.
    pub duration: Seconds,
    /// Leading fraction of `duration` excluded from metrics.
    #[serde(default = "default_warmup")]
    pub warmup_fraction: f64,
    pub topology: TopologySpec,
    pub classes: Vec<ClassSpec>,
    pub computers: Vec<ComputerPlacement>,
    pub policy: PolicyConfig,
    /// Processing overhead added by a dispatcher to every request, seconds.
    #[serde(default)]
    pub dispatcher_overhead: Seconds,
    /// Time a computer needs to answer a probe, seconds.
    #[serde(default)]
    pub probe_overhead: Seconds,
    /// Node hosting the single dispatcher of the centralized policy.
    #[serde(default = "default_root")]
    pub root: String,
    #[serde(default)]
    pub clients: Vec<ClientSpec>,
    #[serde(default)]
    pub sessions: Option<SessionWorkload>,
    #[serde(default)]
    pub background: Vec<BackgroundSpec>,
    #[serde(default = "default_sample_interval")]
    pub load_sample_interval: Seconds,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ScenarioError::Parse(format!("{path}: {}", e.into_inner()))
        })
    }

    /// Pretty JSON with every default filled in.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenarios always serialize")
    }

    /// Hex SHA-256 of the canonical (compact) JSON form.
    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("scenarios always serialize");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn warmup(&self) -> Seconds {
        self.duration * self.warmup_fraction
    }

    pub fn class(&self, name: &LambdaClass) -> Option<&ClassSpec> {
        self.classes.iter().find(|c| &c.name == name)
    }

    /// Checks every cross reference and numeric range; returns the built
    /// topology on success.
    pub fn validate(&self) -> Result<Topology, ScenarioError> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(invalid("duration", format!("must be positive, got {}", self.duration)));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(invalid(
                "warmup_fraction",
                format!("must be in [0, 1), got {}", self.warmup_fraction),
            ));
        }
        if !(self.load_sample_interval > 0.0) {
            return Err(invalid("load_sample_interval", "must be positive"));
        }
        if !(self.dispatcher_overhead >= 0.0) {
            return Err(invalid("dispatcher_overhead", "must be non-negative"));
        }
        if !(self.probe_overhead >= 0.0) {
            return Err(invalid("probe_overhead", "must be non-negative"));
        }
        let topology = self.topology.build()?;
        let node = |field: String, name: &str| topology.id(name).map_err(|_| invalid(field, format!("unknown node {name:?}")));

        let mut class_names = BTreeSet::new();
        for (i, c) in self.classes.iter().enumerate() {
            if !class_names.insert(c.name.clone()) {
                return Err(invalid(format!("classes[{i}].name"), format!("duplicate class {}", c.name)));
            }
            if !(c.output_ratio >= 0.0 && c.output_offset >= 0.0) {
                return Err(invalid(format!("classes[{i}]"), "output size model must be non-negative"));
            }
            if c.profile_size == Some(0) {
                return Err(invalid(format!("classes[{i}].profile_size"), "must be positive"));
            }
        }
        let known = |field: String, class: &LambdaClass| {
            if class_names.contains(class) {
                Ok(())
            } else {
                Err(invalid(field, format!("unknown class {class}")))
            }
        };
        for (i, c) in self.classes.iter().enumerate() {
            if let Some(chain) = &c.chain {
                known(format!("classes[{i}].chain.class"), &chain.class)?;
                if !(chain.size_ratio > 0.0) {
                    return Err(invalid(format!("classes[{i}].chain.size_ratio"), "must be positive"));
                }
                if self.class(&chain.class).and_then(|c| c.chain.as_ref()).is_some() {
                    return Err(invalid(format!("classes[{i}].chain"), "chains are one step deep"));
                }
            }
        }

        let mut placed = BTreeSet::new();
        for (i, c) in self.computers.iter().enumerate() {
            let id = node(format!("computers[{i}].node"), &c.node)?;
            if !placed.insert(id) {
                return Err(invalid(format!("computers[{i}].node"), format!("two computers on {}", c.node)));
            }
            c.spec.validate().map_err(|e| invalid(format!("computers[{i}]"), e))?;
            for (j, container) in c.spec.containers.iter().enumerate() {
                known(format!("computers[{i}].containers[{j}].class"), &container.class)?;
            }
        }

        self.policy
            .estimator
            .validate()
            .map_err(|e| invalid("policy.estimator", e))?;
        if self.policy.probe_size == 0 {
            return Err(invalid("policy.probe_size", "must be positive"));
        }
        if !(self.policy.rr_alpha > 0.0 && self.policy.rr_alpha <= 1.0) {
            return Err(invalid("policy.rr_alpha", "must be in (0, 1]"));
        }
        if self.policy.kind == PolicyKind::Centralized {
            node("root".into(), &self.root)?;
        }

        for (i, c) in self.clients.iter().enumerate() {
            let base = format!("clients[{i}]");
            node(format!("{base}.node"), &c.node)?;
            if let Some(d) = &c.dispatcher {
                node(format!("{base}.dispatcher"), d)?;
            }
            c.arrivals.validate().map_err(|e| invalid(format!("{base}.arrivals"), e))?;
            if c.requests.is_empty() {
                return Err(invalid(format!("{base}.requests"), "must not be empty"));
            }
            for (j, r) in c.requests.iter().enumerate() {
                known(format!("{base}.requests[{j}].class"), &r.class)?;
                if r.size == 0 {
                    return Err(invalid(format!("{base}.requests[{j}].size"), "must be positive"));
                }
            }
            if let Some(r) = &c.roaming {
                if r.nodes.is_empty() || !(r.interval > 0.0) {
                    return Err(invalid(
                        format!("{base}.roaming"),
                        "needs at least one node and a positive interval",
                    ));
                }
                for (j, n) in r.nodes.iter().enumerate() {
                    node(format!("{base}.roaming.nodes[{j}]"), n)?;
                }
            }
        }
        if let Some(s) = &self.sessions {
            s.validate().map_err(|e| invalid("sessions", e))?;
            known("sessions.class".into(), &s.class)?;
            for (i, cell) in s.cells.iter().enumerate() {
                for (j, n) in cell.sectors.iter().enumerate() {
                    node(format!("sessions.cells[{i}].sectors[{j}]"), n)?;
                }
            }
        }
        for (i, b) in self.background.iter().enumerate() {
            let a = node(format!("background[{i}].a"), &b.a)?;
            let z = node(format!("background[{i}].b"), &b.b)?;
            if topology.directed(a, z).is_none() {
                return Err(invalid(format!("background[{i}]"), format!("{} and {} are not adjacent", b.a, b.b)));
            }
            b.traffic.validate().map_err(|e| invalid(format!("background[{i}].traffic"), e))?;
        }
        Ok(topology)
    }
}

/// Reads and validates a scenario document.
pub fn load(text: &str) -> Result<Scenario, ScenarioError> {
    let scenario = Scenario::from_json(text)?;
    scenario.validate()?;
    Ok(scenario)
}

/// Node roles that may host a dispatcher when none is given explicitly.
pub(crate) fn hosts_dispatcher(role: NodeRole) -> bool {
    !matches!(role, NodeRole::Client)
}
