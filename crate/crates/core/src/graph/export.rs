use std::collections::BTreeSet;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{ConceptNode, RelationEdge, SaliencyFilter, SessionGraph, ViewScope};
use crate::annotation::Saliency;

pub const GRAPH_JSON_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExportFormat {
    GraphJson,
    Dot,
}

impl std::str::FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "graph-json" | "json" => Ok(Self::GraphJson),
            "dot" => Ok(Self::Dot),
            other => Err(format!("unknown export format {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParagraphMembers {
    pub index: usize,
    pub nodes: Vec<crate::annotation::EntityId>,
    pub edges: Vec<u64>,
}

/// Serialized form of a session graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub version: u32,
    pub seq: u64,
    pub next_edge_id: u64,
    pub next_group_id: u64,
    pub paragraphs: Vec<ParagraphMembers>,
    pub nodes: Vec<ConceptNode>,
    pub edges: Vec<RelationEdge>,
}

#[derive(Debug, thiserror::Error)]
pub enum ImportError {
    #[error("invalid graph document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported graph document version {0}")]
    Version(u32),
    #[error("edge {0} references a missing node")]
    DanglingEdge(u64),
    #[error("node {0} is listed more than once")]
    DuplicateNode(crate::annotation::EntityId),
}

impl SessionGraph {
    pub fn to_document(&self) -> GraphDocument {
        GraphDocument {
            version: GRAPH_JSON_VERSION,
            seq: self.seq,
            next_edge_id: self.next_edge,
            next_group_id: self.next_group,
            paragraphs: self
                .paragraphs
                .iter()
                .map(|p| ParagraphMembers {
                    index: *p,
                    nodes: self.paragraph_nodes(*p).into_iter().collect(),
                    edges: self.paragraph_edges(*p).into_iter().collect(),
                })
                .collect(),
            nodes: self.nodes.values().cloned().collect(),
            edges: self.edges.values().cloned().collect(),
        }
    }

    pub fn from_document(doc: GraphDocument) -> Result<Self, ImportError> {
        if doc.version != GRAPH_JSON_VERSION {
            return Err(ImportError::Version(doc.version));
        }
        let mut g = SessionGraph {
            seq: doc.seq,
            next_edge: doc.next_edge_id,
            next_group: doc.next_group_id,
            paragraphs: doc.paragraphs.iter().map(|p| p.index).collect(),
            ..Default::default()
        };
        for n in doc.nodes {
            let id = n.id;
            if g.nodes.insert(id, n).is_some() {
                return Err(ImportError::DuplicateNode(id));
            }
        }
        for e in doc.edges {
            if !g.nodes.contains_key(&e.pair.source) || !g.nodes.contains_key(&e.pair.target) {
                return Err(ImportError::DanglingEdge(e.edge_id));
            }
            g.next_edge = g.next_edge.max(e.edge_id + 1);
            g.next_group = g.next_group.max(e.group + 1);
            g.paragraphs.insert(e.origin.paragraph);
            g.edges.insert(e.edge_id, e);
        }
        Ok(g)
    }

    /// Pretty-printed graph-json.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("graph document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ImportError> {
        Self::from_document(serde_json::from_str(text)?)
    }

    /// Graphviz rendering with one cluster per paragraph.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph session {\n  rankdir=LR;\n  node [shape=box, style=rounded];\n");
        for p in &self.paragraphs {
            let Ok(view) = self.visible_subgraph(SaliencyFilter::All, &ViewScope::Split(*p)) else {
                continue;
            };
            let _ = writeln!(out, "  subgraph cluster_p{p} {{\n    label=\"Paragraph {}\";", p + 1);
            for n in &view.nodes {
                let style = if n.placeholder { ", style=dashed" } else { "" };
                let _ = writeln!(out, "    p{p}_n{} [label=\"{}\"{style}];", n.id.get(), escape(&n.label));
            }
            for e in &view.edges {
                let style = if e.pair.saliency == Saliency::Low { ", style=dashed" } else { "" };
                let _ = writeln!(
                    out,
                    "    p{p}_n{} -> p{p}_n{} [label=\"{}\"{style}];",
                    e.pair.source.get(),
                    e.pair.target.get(),
                    escape(&e.label)
                );
            }
            out.push_str("  }\n");
        }
        out.push_str("}\n");
        out
    }

    pub fn export(&self, format: ExportFormat) -> String {
        match format {
            ExportFormat::GraphJson => self.to_json(),
            ExportFormat::Dot => self.to_dot(),
        }
    }

    /// Ids shared by at least two paragraphs.
    pub fn shared_nodes(&self) -> BTreeSet<crate::annotation::EntityId> {
        let mut seen = BTreeSet::new();
        let mut shared = BTreeSet::new();
        for p in &self.paragraphs {
            for id in self.paragraph_nodes(*p) {
                if !seen.insert(id) {
                    shared.insert(id);
                }
            }
        }
        shared
    }
}

fn escape(label: &str) -> String {
    label.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', " ")
}
