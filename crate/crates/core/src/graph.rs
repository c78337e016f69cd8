//! Inference graphs: eight role-tagged event nodes joined by helps/hurts edges.
//!
//! The linearized text form is a sequence of `[ROLE] label` segments. A label
//! runs until the next `[` or the end of the string. Roles may appear in any
//! order on input; [`serialize_graph`] always emits the canonical order
//! `C+ C- S S- M+ M- H+ H-`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Node role within the inference-graph template.
///
/// Declaration order is the canonical order used for serialization, feedback
/// rendering and node-matrix layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeRole {
    #[serde(rename = "C+")]
    ContextPlus,
    #[serde(rename = "C-")]
    ContextMinus,
    #[serde(rename = "S")]
    Situation,
    #[serde(rename = "S-")]
    SituationMinus,
    #[serde(rename = "M+")]
    MediatorPlus,
    #[serde(rename = "M-")]
    MediatorMinus,
    #[serde(rename = "H+")]
    HypothesisPlus,
    #[serde(rename = "H-")]
    HypothesisMinus,
}

impl NodeRole {
    pub const ALL: [NodeRole; 8] = [
        NodeRole::ContextPlus,
        NodeRole::ContextMinus,
        NodeRole::Situation,
        NodeRole::SituationMinus,
        NodeRole::MediatorPlus,
        NodeRole::MediatorMinus,
        NodeRole::HypothesisPlus,
        NodeRole::HypothesisMinus,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            NodeRole::ContextPlus => "C+",
            NodeRole::ContextMinus => "C-",
            NodeRole::Situation => "S",
            NodeRole::SituationMinus => "S-",
            NodeRole::MediatorPlus => "M+",
            NodeRole::MediatorMinus => "M-",
            NodeRole::HypothesisPlus => "H+",
            NodeRole::HypothesisMinus => "H-",
        }
    }

    /// Position in the canonical order.
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for NodeRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for NodeRole {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NodeRole::ALL
            .iter()
            .copied()
            .find(|r| r.tag() == s)
            .ok_or_else(|| GraphError::UnknownTag(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Helps,
    Hurts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub src: NodeRole,
    pub dst: NodeRole,
    pub polarity: Polarity,
}

/// The fixed edge template attached to every parsed graph.
pub const DEFAULT_EDGES: [(NodeRole, NodeRole, Polarity); 10] = {
    use NodeRole::*;
    use Polarity::*;
    [
        (ContextPlus, Situation, Helps),
        (ContextMinus, Situation, Hurts),
        (Situation, MediatorPlus, Helps),
        (Situation, MediatorMinus, Hurts),
        (SituationMinus, MediatorPlus, Hurts),
        (SituationMinus, MediatorMinus, Helps),
        (MediatorPlus, HypothesisPlus, Helps),
        (MediatorPlus, HypothesisMinus, Hurts),
        (MediatorMinus, HypothesisMinus, Helps),
        (MediatorMinus, HypothesisPlus, Hurts),
    ]
};

pub fn default_edges() -> Vec<Edge> {
    DEFAULT_EDGES
        .iter()
        .map(|&(src, dst, polarity)| Edge { src, dst, polarity })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("missing role {0}")]
    MissingRole(NodeRole),
    #[error("duplicate role {0}")]
    DuplicateRole(NodeRole),
    #[error("unknown tag {0:?}")]
    UnknownTag(String),
    #[error("empty label for role {0}")]
    EmptyLabel(NodeRole),
}

/// A single structural problem found by [`validate_graph`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    MissingRole(NodeRole),
    EmptyLabel(NodeRole),
    SelfEdge(NodeRole),
    DuplicateEdge(NodeRole, NodeRole),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingRole(r) => write!(f, "missing role {r}"),
            Violation::EmptyLabel(r) => write!(f, "empty label for role {r}"),
            Violation::SelfEdge(r) => write!(f, "self edge on {r}"),
            Violation::DuplicateEdge(a, b) => write!(f, "duplicate edge {a} -> {b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InferenceGraph {
    nodes: BTreeMap<NodeRole, String>,
    edges: Vec<Edge>,
}

impl InferenceGraph {
    /// Builds a graph from one label per role, in canonical order, with the
    /// default edge template.
    pub fn from_labels<S: AsRef<str>>(labels: [S; 8]) -> Result<Self, GraphError> {
        let mut nodes = BTreeMap::new();
        for (role, label) in NodeRole::ALL.iter().zip(labels.iter()) {
            let label = normalize_label(label.as_ref());
            if label.is_empty() {
                return Err(GraphError::EmptyLabel(*role));
            }
            nodes.insert(*role, label);
        }
        Ok(Self {
            nodes,
            edges: default_edges(),
        })
    }

    /// Builds a graph without enforcing any invariant. Meant for feeding
    /// [`validate_graph`] and for tests.
    pub fn from_parts_unchecked(nodes: BTreeMap<NodeRole, String>, edges: Vec<Edge>) -> Self {
        Self { nodes, edges }
    }

    /// Label of `role`. Panics if the role is absent, which cannot happen for
    /// graphs built through [`parse_graph`] or [`InferenceGraph::from_labels`].
    pub fn label(&self, role: NodeRole) -> &str {
        &self.nodes[&role]
    }

    pub fn get(&self, role: NodeRole) -> Option<&str> {
        self.nodes.get(&role).map(String::as_str)
    }

    pub fn nodes(&self) -> &BTreeMap<NodeRole, String> {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Returns a copy with the label of `role` replaced.
    pub fn with_label(&self, role: NodeRole, label: &str) -> Result<Self, GraphError> {
        let label = normalize_label(label);
        if label.is_empty() {
            return Err(GraphError::EmptyLabel(role));
        }
        let mut out = self.clone();
        out.nodes.insert(role, label);
        Ok(out)
    }

    /// Undirected, unlabeled neighbor lists indexed by canonical role order.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); NodeRole::ALL.len()];
        for e in &self.edges {
            let (a, b) = (e.src.index(), e.dst.index());
            if a == b {
                continue;
            }
            if !adj[a].contains(&b) {
                adj[a].push(b);
            }
            if !adj[b].contains(&a) {
                adj[b].push(a);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }
}

impl fmt::Display for InferenceGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_graph(self))
    }
}

impl FromStr for InferenceGraph {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_graph(s)
    }
}

/// Trims and collapses runs of whitespace to a single space. Case is kept.
pub fn normalize_label(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn parse_graph(text: &str) -> Result<InferenceGraph, GraphError> {
    let mut nodes: BTreeMap<NodeRole, String> = BTreeMap::new();
    let mut rest = text.trim_start();
    if !rest.is_empty() && !rest.starts_with('[') {
        let tok = rest.split_whitespace().next().unwrap_or(rest);
        return Err(GraphError::UnknownTag(tok.to_string()));
    }
    while !rest.is_empty() {
        // rest starts with '['
        let close = match rest.find(']') {
            Some(i) => i,
            None => return Err(GraphError::UnknownTag(rest.to_string())),
        };
        let role: NodeRole = rest[1..close]
            .parse()
            .map_err(|_| GraphError::UnknownTag(rest[..=close].to_string()))?;
        let after = &rest[close + 1..];
        let end = after.find('[').unwrap_or(after.len());
        let label = normalize_label(&after[..end]);
        if nodes.contains_key(&role) {
            return Err(GraphError::DuplicateRole(role));
        }
        if label.is_empty() {
            return Err(GraphError::EmptyLabel(role));
        }
        nodes.insert(role, label);
        rest = &after[end..];
    }
    if let Some(missing) = NodeRole::ALL.iter().find(|r| !nodes.contains_key(r)) {
        return Err(GraphError::MissingRole(*missing));
    }
    Ok(InferenceGraph {
        nodes,
        edges: default_edges(),
    })
}

pub fn serialize_graph(g: &InferenceGraph) -> String {
    let mut out = String::new();
    for (role, label) in &g.nodes {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push('[');
        out.push_str(role.tag());
        out.push_str("] ");
        out.push_str(label);
    }
    out
}

pub fn validate_graph(g: &InferenceGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    for role in NodeRole::ALL {
        match g.nodes.get(&role) {
            None => out.push(Violation::MissingRole(role)),
            Some(l) if l.trim().is_empty() => out.push(Violation::EmptyLabel(role)),
            Some(_) => {}
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    for e in &g.edges {
        if e.src == e.dst {
            out.push(Violation::SelfEdge(e.src));
        } else if !seen.insert((e.src, e.dst)) {
            out.push(Violation::DuplicateEdge(e.src, e.dst));
        }
    }
    out
}
