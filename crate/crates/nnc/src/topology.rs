//! The communication network: a DAG of nodes joined by links of parallel
//! noisy channels, with per-link power penalty weights.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{NncError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Source,
    Intermediate,
    Destination,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Node {
    pub id: String,
    pub role: Role,
    /// Dimension of the signal generated at this node; 0 for non-sources.
    #[serde(default)]
    pub source_dim: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Link {
    pub from: String,
    pub to: String,
    /// Number of parallel channels on the link.
    pub channels: usize,
    pub noise_variance: f64,
    /// Power penalty weight in the training objective.
    pub lambda: f64,
    /// Recorded and reported, never enforced during training: power control
    /// stays with the penalty weights.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power_cap: Option<f64>,
}

impl Link {
    pub fn key(&self) -> String {
        format!("{}->{}", self.from, self.to)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub nodes: Vec<Node>,
    pub links: Vec<Link>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Cycle(String),
    DuplicateLink(String),
    UnknownEndpoint(String),
    SelfLoop(String),
    BadChannelCount(String),
    NegativeNoise(String),
    NegativeLambda(String),
    NegativePowerCap(String),
    BadSourceDim(String),
    SourceWithoutOutgoing(String),
    DestinationWithoutIncoming(String),
    DestinationWithOutgoing(String),
    IntermediateWithoutIncoming(String),
    IntermediateWithoutOutgoing(String),
    UnreachableDestination(String),
    DuplicateNodeId(String),
    NoSources,
    NoDestinations,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            Cycle(s) => write!(f, "graph contains a cycle involving {s}"),
            DuplicateLink(s) => write!(f, "duplicate link {s}"),
            UnknownEndpoint(s) => write!(f, "link endpoint {s} is not a declared node"),
            SelfLoop(s) => write!(f, "self loop at {s}"),
            BadChannelCount(s) => write!(f, "link {s} must have at least one channel"),
            NegativeNoise(s) => write!(f, "link {s} has negative noise variance"),
            NegativeLambda(s) => write!(f, "link {s} has negative lambda"),
            NegativePowerCap(s) => write!(f, "link {s} has negative power cap"),
            BadSourceDim(s) => write!(f, "node {s} has inconsistent source_dim for its role"),
            SourceWithoutOutgoing(s) => write!(f, "source {s} has no outgoing link"),
            DestinationWithoutIncoming(s) => write!(f, "destination {s} has no incoming link"),
            DestinationWithOutgoing(s) => write!(f, "destination {s} must not forward traffic"),
            IntermediateWithoutIncoming(s) => write!(f, "intermediate {s} has no incoming link"),
            IntermediateWithoutOutgoing(s) => write!(f, "intermediate {s} has no outgoing link"),
            UnreachableDestination(s) => write!(f, "destination {s} unreachable from any source"),
            DuplicateNodeId(s) => write!(f, "duplicate node id {s}"),
            NoSources => write!(f, "topology has no source node"),
            NoDestinations => write!(f, "topology has no destination node"),
        }
    }
}

impl Topology {
    pub fn from_json_str(s: &str) -> Result<Topology> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Topology> {
        let text = std::fs::read_to_string(path)?;
        Topology::from_json_str(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("topology is always serializable")
    }

    /// SHA-256 over the canonical JSON form; ties checkpoints to topologies.
    pub fn content_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("topology is always serializable");
        let digest = Sha256::digest(canonical.as_bytes());
        format!("{digest:x}")
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Incoming links of `id`, in declaration order. That order is also the
    /// concatenation order of received codes at the node.
    pub fn links_in(&self, id: &str) -> Vec<(usize, &Link)> {
        self.links
            .iter()
            .enumerate()
            .filter(|(_, l)| l.to == id)
            .collect()
    }

    pub fn links_out(&self, id: &str) -> Vec<(usize, &Link)> {
        self.links
            .iter()
            .enumerate()
            .filter(|(_, l)| l.from == id)
            .collect()
    }

    /// Source nodes sorted by id; this order defines batch column slicing.
    pub fn sources(&self) -> Vec<&Node> {
        let mut v: Vec<&Node> = self.nodes.iter().filter(|n| n.role == Role::Source).collect();
        v.sort_by(|a, b| a.id.cmp(&b.id));
        v
    }

    /// Destination nodes sorted by id.
    pub fn destinations(&self) -> Vec<&Node> {
        let mut v: Vec<&Node> = self
            .nodes
            .iter()
            .filter(|n| n.role == Role::Destination)
            .collect();
        v.sort_by(|a, b| a.id.cmp(&b.id));
        v
    }

    pub fn total_source_dim(&self) -> usize {
        self.sources().iter().map(|n| n.source_dim).sum()
    }

    /// All invariant violations; an empty list means the topology is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut ids = HashSet::new();
        for n in &self.nodes {
            if !ids.insert(n.id.as_str()) {
                out.push(Violation::DuplicateNodeId(n.id.clone()));
            }
            match n.role {
                Role::Source => {
                    if n.source_dim == 0 {
                        out.push(Violation::BadSourceDim(n.id.clone()));
                    }
                }
                _ => {
                    if n.source_dim != 0 {
                        out.push(Violation::BadSourceDim(n.id.clone()));
                    }
                }
            }
        }
        if self.sources().is_empty() {
            out.push(Violation::NoSources);
        }
        if self.destinations().is_empty() {
            out.push(Violation::NoDestinations);
        }

        let mut seen_pairs = HashSet::new();
        for l in &self.links {
            let key = l.key();
            if !ids.contains(l.from.as_str()) {
                out.push(Violation::UnknownEndpoint(l.from.clone()));
            }
            if !ids.contains(l.to.as_str()) {
                out.push(Violation::UnknownEndpoint(l.to.clone()));
            }
            if l.from == l.to {
                out.push(Violation::SelfLoop(key.clone()));
            }
            if !seen_pairs.insert((l.from.clone(), l.to.clone())) {
                out.push(Violation::DuplicateLink(key.clone()));
            }
            if l.channels == 0 {
                out.push(Violation::BadChannelCount(key.clone()));
            }
            if l.noise_variance < 0.0 || !l.noise_variance.is_finite() {
                out.push(Violation::NegativeNoise(key.clone()));
            }
            if l.lambda < 0.0 || !l.lambda.is_finite() {
                out.push(Violation::NegativeLambda(key.clone()));
            }
            if let Some(cap) = l.power_cap {
                if cap < 0.0 || !cap.is_finite() {
                    out.push(Violation::NegativePowerCap(key.clone()));
                }
            }
        }

        for n in &self.nodes {
            let n_in = self.links_in(&n.id).len();
            let n_out = self.links_out(&n.id).len();
            match n.role {
                Role::Source => {
                    if n_out == 0 {
                        out.push(Violation::SourceWithoutOutgoing(n.id.clone()));
                    }
                }
                Role::Destination => {
                    if n_in == 0 {
                        out.push(Violation::DestinationWithoutIncoming(n.id.clone()));
                    }
                    if n_out > 0 {
                        out.push(Violation::DestinationWithOutgoing(n.id.clone()));
                    }
                }
                Role::Intermediate => {
                    if n_in == 0 {
                        out.push(Violation::IntermediateWithoutIncoming(n.id.clone()));
                    }
                    if n_out == 0 {
                        out.push(Violation::IntermediateWithoutOutgoing(n.id.clone()));
                    }
                }
            }
        }

        if self.topological_order().is_err() {
            out.push(Violation::Cycle("(see topological_order)".into()));
        } else {
            // reachability from the source set
            let mut reach: HashSet<&str> = self
                .sources()
                .iter()
                .map(|n| n.id.as_str())
                .collect();
            let mut changed = true;
            while changed {
                changed = false;
                for l in &self.links {
                    if reach.contains(l.from.as_str()) && !reach.contains(l.to.as_str()) {
                        reach.insert(l.to.as_str());
                        changed = true;
                    }
                }
            }
            for d in self.destinations() {
                if !reach.contains(d.id.as_str()) {
                    out.push(Violation::UnreachableDestination(d.id.clone()));
                }
            }
        }
        out
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let violations = self.validate();
        if violations.is_empty() {
            Ok(())
        } else {
            let msgs: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            Err(NncError::config(format!(
                "invalid topology: {}",
                msgs.join("; ")
            )))
        }
    }

    /// Deterministic topological order: Kahn's algorithm, ties broken by
    /// node id.
    pub fn topological_order(&self) -> Result<Vec<String>> {
        let mut indeg: BTreeMap<&str, usize> =
            self.nodes.iter().map(|n| (n.id.as_str(), 0)).collect();
        for l in &self.links {
            if let Some(d) = indeg.get_mut(l.to.as_str()) {
                *d += 1;
            }
        }
        let mut ready: std::collections::BTreeSet<&str> = indeg
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(&id, _)| id)
            .collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(&next) = ready.iter().next() {
            ready.remove(next);
            order.push(next.to_string());
            for l in self.links.iter().filter(|l| l.from == next) {
                if let Some(d) = indeg.get_mut(l.to.as_str()) {
                    *d -= 1;
                    if *d == 0 {
                        ready.insert(l.to.as_str());
                    }
                }
            }
        }
        if order.len() != self.nodes.len() {
            return Err(NncError::config("topology contains a cycle"));
        }
        Ok(order)
    }

    /// Width of the signal entering the inner NNs at `id`: the source
    /// dimension for sources, the sum of incoming channel counts otherwise.
    pub fn incoming_dim(&self, id: &str) -> Result<usize> {
        let node = self
            .node(id)
            .ok_or_else(|| NncError::config(format!("unknown node {id}")))?;
        if node.role == Role::Source {
            Ok(node.source_dim)
        } else {
            Ok(self.links_in(id).iter().map(|(_, l)| l.channels).sum())
        }
    }

    /// Lambda of each link, keyed as "from->to".
    pub fn lambda_map(&self) -> HashMap<String, f64> {
        self.links.iter().map(|l| (l.key(), l.lambda)).collect()
    }
}

/// Power penalty assignment for a topology: one value everywhere, or a
/// default with per-link overrides keyed "from->to".
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaSpec {
    Uniform(f64),
    PerLink {
        default: f64,
        overrides: BTreeMap<String, f64>,
    },
}

impl LambdaSpec {
    pub fn value_for(&self, link_key: &str) -> f64 {
        match self {
            LambdaSpec::Uniform(v) => *v,
            LambdaSpec::PerLink { default, overrides } => {
                *overrides.get(link_key).unwrap_or(default)
            }
        }
    }

    pub fn apply(&self, topology: &mut Topology) {
        for l in &mut topology.links {
            l.lambda = self.value_for(&l.key());
        }
    }
}

/// The 6-node butterfly: sources s1, s2; relay-combiner r1; relay-splitter
/// r2; destinations d1, d2. Seven links, each with `channels` parallel
/// channels.
pub fn builtin_butterfly(channels: usize, noise_variance: f64, lambdas: &LambdaSpec) -> Topology {
    butterfly_with_dims(channels, noise_variance, lambdas, [392, 392])
}

/// Butterfly with configurable per-source dimensions (small dims keep
/// gradient-check models cheap).
pub fn butterfly_with_dims(
    channels: usize,
    noise_variance: f64,
    lambdas: &LambdaSpec,
    source_dims: [usize; 2],
) -> Topology {
    let node = |id: &str, role, dim| Node {
        id: id.to_string(),
        role,
        source_dim: dim,
    };
    let nodes = vec![
        node("s1", Role::Source, source_dims[0]),
        node("s2", Role::Source, source_dims[1]),
        node("r1", Role::Intermediate, 0),
        node("r2", Role::Intermediate, 0),
        node("d1", Role::Destination, 0),
        node("d2", Role::Destination, 0),
    ];
    let mk = |from: &str, to: &str| Link {
        from: from.to_string(),
        to: to.to_string(),
        channels,
        noise_variance,
        lambda: 0.0,
        power_cap: None,
    };
    let links = vec![
        mk("s1", "d1"),
        mk("s1", "r1"),
        mk("s2", "r1"),
        mk("s2", "d2"),
        mk("r1", "r2"),
        mk("r2", "d1"),
        mk("r2", "d2"),
    ];
    let mut topo = Topology { nodes, links };
    lambdas.apply(&mut topo);
    topo
}

/// A linear chain s -> (intermediates...) -> d with one source of `source_dim`.
pub fn chain(hops: usize, channels: usize, noise_variance: f64, lambda: f64, source_dim: usize) -> Topology {
    assert!(hops >= 1);
    let mut nodes = vec![Node {
        id: "s1".into(),
        role: Role::Source,
        source_dim,
    }];
    for i in 1..hops {
        nodes.push(Node {
            id: format!("m{i}"),
            role: Role::Intermediate,
            source_dim: 0,
        });
    }
    nodes.push(Node {
        id: "d1".into(),
        role: Role::Destination,
        source_dim: 0,
    });
    let ids: Vec<String> = nodes.iter().map(|n| n.id.clone()).collect();
    let links = ids
        .windows(2)
        .map(|w| Link {
            from: w[0].clone(),
            to: w[1].clone(),
            channels,
            noise_variance,
            lambda,
            power_cap: None,
        })
        .collect();
    Topology { nodes, links }
}
