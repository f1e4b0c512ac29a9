//! Bipartite attribute–class knowledge graphs: extraction from classifier
//! weights, exact graph edit distance, and the KG-only baseline classifier.

use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;

use crate::classifier::LogRegModel;
use crate::dataset::{AttributeVector, AttributeVocabulary, ClassVocabulary};
use crate::error::{Error, Result};
use crate::kb::{kb_to_graph, KnowledgeBase};

/// Edge threshold used when extracting a graph from trained weights.
pub const DEFAULT_EPSILON: f64 = 0.01;

/// Largest graph (node count) accepted by [`ged`].
pub const MAX_GED_NODES: usize = 40;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KnowledgeGraph {
    attr_nodes: BTreeSet<String>,
    class_nodes: BTreeSet<String>,
    edges: BTreeSet<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(tag = "kind", content = "name", rename_all = "snake_case")]
pub enum Node {
    Attribute(String),
    Class(String),
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Attribute(n) => write!(f, "({n}) [attribute]"),
            Node::Class(n) => write!(f, "({n}) [class]"),
        }
    }
}

impl KnowledgeGraph {
    pub fn add_attr_node(&mut self, name: &str) -> bool {
        self.attr_nodes.insert(name.to_string())
    }

    pub fn add_class_node(&mut self, name: &str) -> bool {
        self.class_nodes.insert(name.to_string())
    }

    /// Adds the edge and both endpoints.
    pub fn add_edge(&mut self, attribute: &str, class: &str) -> bool {
        self.add_attr_node(attribute);
        self.add_class_node(class);
        self.edges.insert((attribute.to_string(), class.to_string()))
    }

    pub fn attr_nodes(&self) -> &BTreeSet<String> {
        &self.attr_nodes
    }

    pub fn class_nodes(&self) -> &BTreeSet<String> {
        &self.class_nodes
    }

    pub fn edges(&self) -> &BTreeSet<(String, String)> {
        &self.edges
    }

    pub fn has_edge(&self, attribute: &str, class: &str) -> bool {
        self.edges
            .contains(&(attribute.to_string(), class.to_string()))
    }

    pub fn node_count(&self) -> usize {
        self.attr_nodes.len() + self.class_nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_count() == 0
    }

    pub fn nodes(&self) -> BTreeSet<Node> {
        self.attr_nodes
            .iter()
            .cloned()
            .map(Node::Attribute)
            .chain(self.class_nodes.iter().cloned().map(Node::Class))
            .collect()
    }

    pub fn has_node(&self, node: &Node) -> bool {
        match node {
            Node::Attribute(n) => self.attr_nodes.contains(n),
            Node::Class(n) => self.class_nodes.contains(n),
        }
    }

    fn degree(&self, node: &Node) -> usize {
        match node {
            Node::Attribute(n) => self.edges.iter().filter(|(a, _)| a == n).count(),
            Node::Class(n) => self.edges.iter().filter(|(_, c)| c == n).count(),
        }
    }

    /// Applies one edit; fails if the edit is not legal on this graph.
    pub fn apply(&mut self, op: &EditOp) -> Result<()> {
        let illegal = || Error::validation(format!("edit {op} does not apply"));
        match op {
            EditOp::InsertNode(node) => {
                let fresh = match node {
                    Node::Attribute(n) => self.attr_nodes.insert(n.clone()),
                    Node::Class(n) => self.class_nodes.insert(n.clone()),
                };
                fresh.then_some(()).ok_or_else(illegal)
            }
            EditOp::DeleteNode(node) => {
                if self.degree(node) > 0 {
                    return Err(illegal());
                }
                let present = match node {
                    Node::Attribute(n) => self.attr_nodes.remove(n),
                    Node::Class(n) => self.class_nodes.remove(n),
                };
                present.then_some(()).ok_or_else(illegal)
            }
            EditOp::InsertEdge { attribute, class } => {
                if !self.attr_nodes.contains(attribute) || !self.class_nodes.contains(class) {
                    return Err(illegal());
                }
                self.edges
                    .insert((attribute.clone(), class.clone()))
                    .then_some(())
                    .ok_or_else(illegal)
            }
            EditOp::DeleteEdge { attribute, class } => self
                .edges
                .remove(&(attribute.clone(), class.clone()))
                .then_some(())
                .ok_or_else(illegal),
        }
    }

    /// Sorted edge list; isolated nodes are listed after the edges.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for (a, c) in &self.edges {
            out.push_str(&format!("({a}) -- ({c})\n"));
        }
        for node in self.nodes() {
            if self.degree(&node) == 0 {
                out.push_str(&format!("{node}\n"));
            }
        }
        out
    }

    pub fn parse_edge_list(text: &str, source_name: &str) -> Result<Self> {
        let mut g = KnowledgeGraph::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |m: &str| Error::parse(source_name, idx + 1, m);
            if let Some((a, c)) = line.split_once(") -- (") {
                let a = a.strip_prefix('(').ok_or_else(|| err("expected '('"))?;
                let c = c.strip_suffix(')').ok_or_else(|| err("expected ')'"))?;
                if a.is_empty() || c.is_empty() {
                    return Err(err("empty node name"));
                }
                g.add_edge(a, c);
            } else if let Some(name) = line
                .strip_prefix('(')
                .and_then(|l| l.strip_suffix(") [attribute]"))
            {
                g.add_attr_node(name);
            } else if let Some(name) = line
                .strip_prefix('(')
                .and_then(|l| l.strip_suffix(") [class]"))
            {
                g.add_class_node(name);
            } else {
                return Err(err("expected \"(attr) -- (class)\" or an isolated node"));
            }
        }
        Ok(g)
    }

    /// Undirected dot-style export.
    pub fn to_dot(&self) -> String {
        let esc = |s: &str| s.replace('\\', "\\\\").replace('"', "\\\"");
        let mut out = String::from("graph kg {\n");
        for a in &self.attr_nodes {
            out.push_str(&format!("  \"{}\" [shape=box];\n", esc(a)));
        }
        for c in &self.class_nodes {
            out.push_str(&format!("  \"{}\" [shape=ellipse];\n", esc(c)));
        }
        for (a, c) in &self.edges {
            out.push_str(&format!("  \"{}\" -- \"{}\";\n", esc(a), esc(c)));
        }
        out.push_str("}\n");
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum EditOp {
    InsertNode(Node),
    DeleteNode(Node),
    InsertEdge { attribute: String, class: String },
    DeleteEdge { attribute: String, class: String },
}

impl fmt::Display for EditOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EditOp::InsertNode(n) => write!(f, "insert node {n}"),
            EditOp::DeleteNode(n) => write!(f, "delete node {n}"),
            EditOp::InsertEdge { attribute, class } => {
                write!(f, "insert edge ({attribute}) -- ({class})")
            }
            EditOp::DeleteEdge { attribute, class } => {
                write!(f, "delete edge ({attribute}) -- ({class})")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GedResult {
    pub distance: usize,
    pub edit_script: Vec<EditOp>,
}

/// Exact graph edit distance under unit insert/delete costs with
/// label-preserving node matching (no substitutions).
///
/// Node labels are unique within a graph and cannot be relabelled, so the
/// only admissible node correspondence pairs identical labels. Under that
/// correspondence every unmatched node and edge needs exactly one edit, and
/// the returned script (edge deletions, node deletions, node insertions,
/// edge insertions) is minimal.
pub fn ged(a: &KnowledgeGraph, b: &KnowledgeGraph) -> Result<GedResult> {
    for (name, g) in [("first", a), ("second", b)] {
        if g.node_count() > MAX_GED_NODES {
            return Err(Error::validation(format!(
                "{name} graph has {} nodes; exact GED supports at most {MAX_GED_NODES} \
                 (approximate GED is not provided)",
                g.node_count()
            )));
        }
    }
    let (nodes_a, nodes_b) = (a.nodes(), b.nodes());
    let mut script = Vec::new();
    for (attribute, class) in a.edges.difference(&b.edges) {
        script.push(EditOp::DeleteEdge {
            attribute: attribute.clone(),
            class: class.clone(),
        });
    }
    for node in nodes_a.difference(&nodes_b) {
        script.push(EditOp::DeleteNode(node.clone()));
    }
    for node in nodes_b.difference(&nodes_a) {
        script.push(EditOp::InsertNode(node.clone()));
    }
    for (attribute, class) in b.edges.difference(&a.edges) {
        script.push(EditOp::InsertEdge {
            attribute: attribute.clone(),
            class: class.clone(),
        });
    }
    Ok(GedResult {
        distance: script.len(),
        edit_script: script,
    })
}

/// Edge `(attr j, class k)` iff `θ[k][j] > epsilon`. All classes are kept
/// as nodes; attributes without an edge are omitted.
pub fn extract_kg(model: &LogRegModel, epsilon: f64) -> KnowledgeGraph {
    let mut g = KnowledgeGraph::default();
    for (k, class) in model.class_vocab().names().iter().enumerate() {
        g.add_class_node(class);
        for j in 0..model.n_attributes() {
            if model.weight(k, j) > epsilon {
                g.add_edge(model.attr_vocab().name_at(j), class);
            }
        }
    }
    g
}

/// Scores each class by the number of present attributes linked to it;
/// argmax with ties to the lowest class id.
pub fn kg_deterministic_classify(
    kg: &KnowledgeGraph,
    z: &AttributeVector,
    attr_vocab: &AttributeVocabulary,
    class_vocab: &ClassVocabulary,
) -> Result<usize> {
    if z.len() != attr_vocab.len() {
        return Err(Error::validation(format!(
            "attribute vector length {} does not match vocabulary size {}",
            z.len(),
            attr_vocab.len()
        )));
    }
    unresolved_names(kg, attr_vocab, class_vocab)?;
    let mut best = (0usize, 0usize);
    for (k, class) in class_vocab.names().iter().enumerate() {
        let score = z
            .ones()
            .filter(|&j| kg.has_edge(attr_vocab.name_at(j), class))
            .count();
        if score > best.1 {
            best = (k, score);
        }
    }
    Ok(best.0)
}

fn unresolved_names(
    kg: &KnowledgeGraph,
    attr_vocab: &AttributeVocabulary,
    class_vocab: &ClassVocabulary,
) -> Result<()> {
    let mut missing: Vec<String> = kg
        .attr_nodes
        .iter()
        .filter(|a| attr_vocab.id_of(a).is_none())
        .map(|a| format!("attribute {a:?}"))
        .collect();
    missing.extend(
        kg.class_nodes
            .iter()
            .filter(|c| class_vocab.id_of(c).is_none())
            .map(|c| format!("class {c:?}")),
    );
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::validation(format!(
            "names not in model vocabulary: {}",
            missing.join(", ")
        )))
    }
}

/// Compares the weight-extracted graph with the expert graph; the model's
/// explanations are valid iff the edit distance is zero.
pub fn audit_validity(
    model: &LogRegModel,
    expert_kb: &KnowledgeBase,
    epsilon: f64,
) -> Result<(bool, GedResult)> {
    let expert = kb_to_graph(expert_kb);
    unresolved_names(&expert, model.attr_vocab(), model.class_vocab())?;
    let extracted = extract_kg(model, epsilon);
    let result = ged(&extracted, &expert)?;
    Ok((result.distance == 0, result))
}
