//! Radial network description, unit configurations and JSON documents.
//!
//! Edges are oriented: the endpoint listed first in a document is the tail,
//! and every per-edge angle quantity means `θ_tail − θ_head`. Node ids are
//! arbitrary integers; internally nodes are addressed by dense indices
//! `0..n` assigned in document order.

use std::collections::{HashMap, HashSet, VecDeque};
use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PAPER6_DOCUMENT: &str = include_str!("../fixtures/paper6.json");

/// Generation unit type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum UnitType {
    /// Synchronous machine.
    M,
    /// Converter in closed loop with droop control.
    C,
}

impl UnitType {
    pub const ALL: [UnitType; 2] = [UnitType::M, UnitType::C];

    /// Position in [`UnitType::ALL`]; also the bit value in state indices.
    pub fn index(self) -> usize {
        match self {
            UnitType::M => 0,
            UnitType::C => 1,
        }
    }

    pub fn flipped(self) -> UnitType {
        match self {
            UnitType::M => UnitType::C,
            UnitType::C => UnitType::M,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            UnitType::M => 'M',
            UnitType::C => 'C',
        }
    }
}

/// One unit type per node, indexed by dense node index.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Configuration(Vec<UnitType>);

impl Configuration {
    pub fn new(types: Vec<UnitType>) -> Self {
        Configuration(types)
    }

    pub fn uniform(n: usize, unit: UnitType) -> Self {
        Configuration(vec![unit; n])
    }

    /// Every unit a synchronous machine; the usual starting point for learning.
    pub fn all_machines(n: usize) -> Self {
        Self::uniform(n, UnitType::M)
    }

    /// Decodes a state index: bit `i` holds node `i` (M = 0, C = 1).
    pub fn from_index(index: usize, n: usize) -> Self {
        Configuration(
            (0..n)
                .map(|i| if (index >> i) & 1 == 1 { UnitType::C } else { UnitType::M })
                .collect(),
        )
    }

    pub fn index(&self) -> usize {
        self.0
            .iter()
            .enumerate()
            .map(|(i, t)| t.index() << i)
            .sum()
    }

    /// All `2^n` configurations in state-index order.
    pub fn enumerate(n: usize) -> impl Iterator<Item = Configuration> {
        (0..1usize << n).map(move |k| Configuration::from_index(k, n))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn types(&self) -> &[UnitType] {
        &self.0
    }

    pub fn get(&self, i: usize) -> UnitType {
        self.0[i]
    }

    pub fn set(&mut self, i: usize, unit: UnitType) {
        self.0[i] = unit;
    }

    /// Copy with node `i` switched to `unit`.
    pub fn with(&self, i: usize, unit: UnitType) -> Configuration {
        let mut next = self.clone();
        next.0[i] = unit;
        next
    }

    /// Number of coordinates in which two configurations differ.
    pub fn distance(&self, other: &Configuration) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }

    pub(crate) fn check_len(&self, n: usize) -> Result<()> {
        if self.0.len() != n {
            return Err(Error::ConfigLength { expected: n, got: self.0.len() });
        }
        Ok(())
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in &self.0 {
            write!(f, "{}", t.as_char())?;
        }
        Ok(())
    }
}

impl FromStr for Configuration {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                'M' | 'm' => Ok(UnitType::M),
                'C' | 'c' => Ok(UnitType::C),
                _ => Err(Error::ConfigSyntax(s.to_string())),
            })
            .collect::<Result<Vec<_>>>()
            .and_then(|v| {
                if v.is_empty() {
                    Err(Error::ConfigSyntax(s.to_string()))
                } else {
                    Ok(Configuration(v))
                }
            })
    }
}

/// Per-unit damping of the two unit types.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DampingParams {
    pub machine: f64,
    pub converter: f64,
}

impl DampingParams {
    pub fn new(machine: f64, converter: f64) -> Result<Self> {
        for (name, d) in [("M", machine), ("C", converter)] {
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::Validation(format!(
                    "damping {name} must be positive and finite, got {d}"
                )));
            }
        }
        Ok(DampingParams { machine, converter })
    }

    pub fn of(&self, unit: UnitType) -> f64 {
        match unit {
            UnitType::M => self.machine,
            UnitType::C => self.converter,
        }
    }

    /// Machines are normally the more heavily damped units. Violations are
    /// legal but worth a warning.
    pub fn is_conventional(&self) -> bool {
        self.machine > self.converter
    }
}

/// Desired steady-state angle difference (radians) for every edge, in edge
/// order and edge orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetAngles(Vec<f64>);

impl TargetAngles {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if let Some((e, t)) = theta
            .iter()
            .enumerate()
            .find(|(_, t)| !(t.is_finite() && t.abs() < FRAC_PI_2))
        {
            return Err(Error::Validation(format!(
                "target angle {t} on edge {e} is not phase cohesive (|θ| < π/2)"
            )));
        }
        Ok(TargetAngles(theta))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sines(&self) -> Vec<f64> {
        self.0.iter().map(|t| t.sin()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub id: i64,
    pub p0: f64,
}

/// A line between dense node indices `tail` and `head`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub tail: usize,
    pub head: usize,
    pub b: f64,
}

impl Edge {
    /// `+1` at the tail, `-1` at the head, `0` otherwise.
    pub fn sign_at(&self, node: usize) -> f64 {
        if node == self.tail {
            1.0
        } else if node == self.head {
            -1.0
        } else {
            0.0
        }
    }

    pub fn other(&self, node: usize) -> usize {
        if node == self.tail {
            self.head
        } else {
            self.tail
        }
    }
}

/// One leaf-removal step: `node` is a leaf whose last remaining edge is `edge`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Peel {
    pub node: usize,
    pub edge: usize,
}

/// A validated radial (tree) network.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerNetwork {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    incident: Vec<Vec<usize>>,
    peel: Vec<Peel>,
}

impl PowerNetwork {
    /// Builds and validates a network from `(id, p0)` nodes and
    /// `(tail id, head id, b)` edges. Edge indices follow the given order.
    pub fn new(nodes: Vec<(i64, f64)>, edges: Vec<(i64, i64, f64)>) -> Result<Self> {
        let invalid = |msg: String| Err(Error::Validation(msg));
        if nodes.len() < 2 {
            return invalid(format!("need at least 2 nodes, got {}", nodes.len()));
        }

        let mut index_of = HashMap::with_capacity(nodes.len());
        for (k, &(id, p0)) in nodes.iter().enumerate() {
            if index_of.insert(id, k).is_some() {
                return invalid(format!("duplicate node id {id}"));
            }
            if !p0.is_finite() {
                return invalid(format!("node {id} has non-finite p0"));
            }
        }

        let mut seen = HashSet::with_capacity(edges.len());
        let mut parsed = Vec::with_capacity(edges.len());
        for &(tail_id, head_id, b) in &edges {
            let lookup = |id: i64| {
                index_of
                    .get(&id)
                    .copied()
                    .ok_or_else(|| Error::Validation(format!("edge references unknown node {id}")))
            };
            let tail = lookup(tail_id)?;
            let head = lookup(head_id)?;
            if tail == head {
                return invalid(format!("self loop at node {tail_id}"));
            }
            if !(b.is_finite() && b > 0.0) {
                return invalid(format!(
                    "non-positive susceptance {b} on edge ({tail_id},{head_id})"
                ));
            }
            if !seen.insert((tail.min(head), tail.max(head))) {
                return invalid(format!("duplicate edge ({tail_id},{head_id})"));
            }
            parsed.push(Edge { tail, head, b });
        }

        // union-find: any edge joining an already connected pair closes a cycle
        let n = nodes.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for e in &parsed {
            let (a, b) = (find(&mut parent, e.tail), find(&mut parent, e.head));
            if a == b {
                return invalid(format!(
                    "cycle detected at edge ({},{})",
                    nodes[e.tail].0, nodes[e.head].0
                ));
            }
            parent[a] = b;
        }
        if parsed.len() != n - 1 {
            return invalid(format!(
                "disconnected: {} edges for {} nodes",
                parsed.len(),
                n
            ));
        }

        let mut incident = vec![Vec::new(); n];
        for (k, e) in parsed.iter().enumerate() {
            incident[e.tail].push(k);
            incident[e.head].push(k);
        }
        let peel = peel_order(&parsed, &incident);

        Ok(PowerNetwork {
            nodes: nodes.into_iter().map(|(id, p0)| Node { id, p0 }).collect(),
            edges: parsed,
            incident,
            peel,
        })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node_id(&self, i: usize) -> i64 {
        self.nodes[i].id
    }

    pub fn index_of(&self, id: i64) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn p0(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.p0).collect()
    }

    pub fn susceptances(&self) -> Vec<f64> {
        self.edges.iter().map(|e| e.b).collect()
    }

    pub fn min_susceptance(&self) -> f64 {
        self.edges.iter().map(|e| e.b).fold(f64::INFINITY, f64::min)
    }

    /// Edge indices touching dense node `i`.
    pub fn incident_edges(&self, i: usize) -> &[usize] {
        &self.incident[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.incident[i].len()
    }

    pub(crate) fn peel(&self) -> &[Peel] {
        &self.peel
    }

    /// Node-by-edge incidence matrix, columns in edge order.
    pub fn incidence(&self) -> IncidenceMatrix {
        let (n, m) = (self.node_count(), self.edge_count());
        let mut entries = vec![0i8; n * m];
        for (k, e) in self.edges.iter().enumerate() {
            entries[e.tail * m + k] = 1;
            entries[e.head * m + k] = -1;
        }
        IncidenceMatrix { rows: n, cols: m, entries }
    }
}

fn peel_order(edges: &[Edge], incident: &[Vec<usize>]) -> Vec<Peel> {
    let n = incident.len();
    let mut degree: Vec<usize> = incident.iter().map(Vec::len).collect();
    let mut removed_edge = vec![false; edges.len()];
    let mut queue: VecDeque<usize> = (0..n).filter(|&v| degree[v] == 1).collect();
    let mut order = Vec::with_capacity(edges.len());
    while let Some(v) = queue.pop_front() {
        if order.len() == edges.len() {
            break;
        }
        if degree[v] != 1 {
            continue;
        }
        let Some(&k) = incident[v].iter().find(|&&k| !removed_edge[k]) else {
            continue;
        };
        removed_edge[k] = true;
        degree[v] = 0;
        let u = edges[k].other(v);
        degree[u] -= 1;
        if degree[u] == 1 {
            queue.push_back(u);
        }
        order.push(Peel { node: v, edge: k });
    }
    order
}

/// Dense `n × m` incidence matrix with `+1` at the tail and `-1` at the head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncidenceMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<i8>,
}

impl IncidenceMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, node: usize, edge: usize) -> i8 {
        self.entries[node * self.cols + edge]
    }

    pub fn column(&self, edge: usize) -> Vec<i8> {
        (0..self.rows).map(|i| self.get(i, edge)).collect()
    }

    /// `I · x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| {
                (0..self.cols)
                    .map(|k| f64::from(self.get(i, k)) * x[k])
                    .sum()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    id: i64,
    p0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeDoc {
    tail: i64,
    head: i64,
    b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DampingDoc {
    #[serde(rename = "M")]
    machine: f64,
    #[serde(rename = "C")]
    converter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDocument {
    nodes: Vec<NodeDoc>,
    edges: Vec<EdgeDoc>,
    damping: DampingDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    targets: Option<Vec<f64>>,
}

/// Everything a network document carries.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub network: PowerNetwork,
    pub damping: DampingParams,
    pub targets: Option<TargetAngles>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: NetworkDocument =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let network = PowerNetwork::new(
            doc.nodes.iter().map(|n| (n.id, n.p0)).collect(),
            doc.edges.iter().map(|e| (e.tail, e.head, e.b)).collect(),
        )?;
        let damping = DampingParams::new(doc.damping.machine, doc.damping.converter)?;
        let targets = match doc.targets {
            None => None,
            Some(t) if t.len() != network.edge_count() => {
                return Err(Error::Validation(format!(
                    "{} targets for {} edges",
                    t.len(),
                    network.edge_count()
                )))
            }
            Some(t) => Some(TargetAngles::new(t)?),
        };
        Ok(Scenario { network, damping, targets })
    }

    pub fn to_json(&self) -> String {
        let net = &self.network;
        let doc = NetworkDocument {
            nodes: net.nodes.iter().map(|n| NodeDoc { id: n.id, p0: n.p0 }).collect(),
            edges: net
                .edges
                .iter()
                .map(|e| EdgeDoc { tail: net.node_id(e.tail), head: net.node_id(e.head), b: e.b })
                .collect(),
            damping: DampingDoc { machine: self.damping.machine, converter: self.damping.converter },
            targets: self.targets.as_ref().map(|t| t.as_slice().to_vec()),
        };
        serde_json::to_string_pretty(&doc).expect("network document serializes")
    }

    /// The bundled six-unit line network.
    pub fn paper6() -> Self {
        Scenario::from_json(PAPER6_DOCUMENT).expect("bundled fixture is valid")
    }

    pub fn paper6_document() -> &'static str {
        PAPER6_DOCUMENT
    }
}

/// Parses a network document and returns only the network.
pub fn load_network(text: &str) -> Result<PowerNetwork> {
    Scenario::from_json(text).map(|s| s.network)
}

/// Six units on the line 1–2–3–4–5–6 with d_M = 25, d_C = 15 and the
/// target angles realized by `MCCCCM`.
pub fn paper6_fixture() -> (PowerNetwork, DampingParams, TargetAngles) {
    let s = Scenario::paper6();
    let targets = s.targets.expect("fixture carries targets");
    (s.network, s.damping, targets)
}
