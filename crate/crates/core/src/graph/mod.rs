//! Session concept graph.
//!
//! Nodes are keyed by entity id and collect every mention of that id; edges
//! are individual relationship pairs, grouped per annotation. Every state
//! change is expressed as a [`Change`], committed through a single
//! sequence-numbered path, so replaying the emitted [`GraphDiff`]s onto an
//! empty graph reproduces the graph exactly.

mod export;
mod ops;
mod view;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::annotation::{EntityId, ParseEvent, RelationPair, Span};

pub use export::{ExportFormat, GraphDocument, ImportError, GRAPH_JSON_VERSION};
pub use ops::TextRewrite;
pub use view::{EdgeView, GraphView, Highlight, NodeView, SaliencyFilter, ViewScope};

/// Label shown for a node referenced before any of its mentions arrived.
pub const PLACEHOLDER_LABEL: &str = "...";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub paragraph: usize,
    /// Range in the paragraph's stripped text.
    pub span: Span,
    pub text: String,
}

/// Where an annotation sits: paragraph plus stripped-text range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Origin {
    pub paragraph: usize,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptNode {
    pub id: EntityId,
    pub label: String,
    pub mentions: Vec<Mention>,
    pub placeholder: bool,
    #[serde(default)]
    pub collapsed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_by: Option<EntityId>,
}

impl ConceptNode {
    fn placeholder(id: EntityId) -> Self {
        Self {
            id,
            label: PLACEHOLDER_LABEL.to_string(),
            mentions: Vec::new(),
            placeholder: true,
            collapsed: false,
            hidden_by: None,
        }
    }
}

/// Longest mention by character count; ties keep the earliest.
fn longest_mention(mentions: &[Mention]) -> Option<&Mention> {
    let mut best: Option<&Mention> = None;
    for m in mentions {
        if best.is_none_or(|b| m.text.chars().count() > b.text.chars().count()) {
            best = Some(m);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationEdge {
    pub edge_id: u64,
    pub label: String,
    pub pair: RelationPair,
    /// Edges from the same annotation share a group.
    pub group: u64,
    pub origin: Origin,
}

impl RelationEdge {
    /// Identity used to drop duplicates after merges.
    fn dedup_key(&self) -> (String, RelationPair) {
        (self.label.clone(), self.pair)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("node {0} not found")]
    NotFound(EntityId),
    #[error("paragraph {0} not found")]
    UnknownParagraph(usize),
    #[error("node {0} is not a valid target: {1}")]
    InvalidTarget(EntityId, &'static str),
    #[error("cannot merge node {0} into itself")]
    SameNode(EntityId),
    #[error("merged view needs at least one paragraph")]
    EmptySelection,
}

/// A single graph mutation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Change {
    ParagraphAdded {
        paragraph: usize,
    },
    NodeAdded {
        id: EntityId,
        label: String,
        placeholder: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mention: Option<Mention>,
    },
    /// Co-referenced mention that does not change the label.
    MentionAdded {
        id: EntityId,
        mention: Mention,
    },
    PlaceholderResolved {
        id: EntityId,
        label: String,
        mention: Mention,
    },
    LabelUpgraded {
        id: EntityId,
        label: String,
        mention: Mention,
    },
    EdgeAdded {
        edge: RelationEdge,
    },
    EdgesRemoved {
        edge_ids: Vec<u64>,
    },
    /// Mentions withdrawn by a correction; the node keeps its edges.
    MentionsRetracted {
        id: EntityId,
        paragraph: usize,
        spans: Vec<Span>,
        label: String,
        placeholder: bool,
    },
    NodeTrimmed {
        id: EntityId,
    },
    /// Node left with neither mentions nor edges.
    NodePruned {
        id: EntityId,
    },
    NodesMerged {
        from: EntityId,
        into: EntityId,
        label: String,
        placeholder: bool,
        /// Edges that now point at `into`, with their new pairs.
        rewired: Vec<(u64, RelationPair)>,
    },
    CollapseChanged {
        id: EntityId,
        collapsed: bool,
        /// Nodes hidden (on collapse) or restored (on expand).
        nodes: Vec<EntityId>,
        /// Text ranges to grey out or restore.
        greyed: Vec<Origin>,
    },
    VisibilityChanged {
        id: EntityId,
        hidden_by: Option<EntityId>,
    },
    /// Mentions and edge origins in `paragraph` starting at or after `from`
    /// move by `delta` bytes.
    SpansShifted {
        paragraph: usize,
        from: usize,
        delta: isize,
    },
}

/// Sequence-numbered change record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphDiff {
    pub seq: u64,
    #[serde(flatten)]
    pub change: Change,
    /// Set on diffs produced by a correction, so renderers can animate.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub animate: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SessionGraph {
    nodes: BTreeMap<EntityId, ConceptNode>,
    edges: BTreeMap<u64, RelationEdge>,
    paragraphs: BTreeSet<usize>,
    seq: u64,
    next_edge: u64,
    next_group: u64,
}

impl SessionGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a graph from a diff log.
    pub fn replay<'a>(diffs: impl IntoIterator<Item = &'a GraphDiff>) -> Self {
        let mut g = Self::new();
        for d in diffs {
            g.apply_diff(d);
        }
        g
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }

    pub fn node(&self, id: EntityId) -> Option<&ConceptNode> {
        self.nodes.get(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &ConceptNode> {
        self.nodes.values()
    }

    pub fn edges(&self) -> impl Iterator<Item = &RelationEdge> {
        self.edges.values()
    }

    pub fn edge(&self, edge_id: u64) -> Option<&RelationEdge> {
        self.edges.get(&edge_id)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn paragraphs(&self) -> impl Iterator<Item = usize> + '_ {
        self.paragraphs.iter().copied()
    }

    pub fn has_paragraph(&self, paragraph: usize) -> bool {
        self.paragraphs.contains(&paragraph)
    }

    pub fn placeholder_count(&self) -> usize {
        self.nodes.values().filter(|n| n.placeholder).count()
    }

    pub fn max_entity_id(&self) -> Option<EntityId> {
        self.nodes.keys().next_back().copied()
    }

    /// Ids that belong to a paragraph: mentioned there or an endpoint of an
    /// edge annotated there.
    pub fn paragraph_nodes(&self, paragraph: usize) -> BTreeSet<EntityId> {
        let mut ids: BTreeSet<EntityId> = self
            .nodes
            .values()
            .filter(|n| n.mentions.iter().any(|m| m.paragraph == paragraph))
            .map(|n| n.id)
            .collect();
        for e in self.edges.values().filter(|e| e.origin.paragraph == paragraph) {
            ids.insert(e.pair.source);
            ids.insert(e.pair.target);
        }
        ids
    }

    pub fn paragraph_edges(&self, paragraph: usize) -> BTreeSet<u64> {
        self.edges
            .values()
            .filter(|e| e.origin.paragraph == paragraph)
            .map(|e| e.edge_id)
            .collect()
    }

    pub fn incident_edges(&self, id: EntityId) -> impl Iterator<Item = &RelationEdge> {
        self.edges.values().filter(move |e| e.pair.touches(id))
    }

    /// Registers a paragraph so it can be viewed before it has annotations.
    pub fn open_paragraph(&mut self, paragraph: usize) -> Vec<GraphDiff> {
        if self.paragraphs.contains(&paragraph) {
            return Vec::new();
        }
        vec![self.commit(Change::ParagraphAdded { paragraph })]
    }

    /// Applies one parse event. Spans are taken relative to the paragraph.
    pub fn apply_event(&mut self, event: &ParseEvent, paragraph: usize) -> Vec<GraphDiff> {
        let mut out = Vec::new();
        match event {
            ParseEvent::Entity { id, label, clean_span, .. } => {
                out.extend(self.open_paragraph(paragraph));
                let mention = Mention {
                    paragraph,
                    span: *clean_span,
                    text: label.clone(),
                };
                let change = match self.nodes.get(id) {
                    None => Change::NodeAdded {
                        id: *id,
                        label: label.clone(),
                        placeholder: false,
                        mention: Some(mention),
                    },
                    Some(n) if n.placeholder => Change::PlaceholderResolved {
                        id: *id,
                        label: label.clone(),
                        mention,
                    },
                    Some(n) if label.chars().count() > n.label.chars().count() => Change::LabelUpgraded {
                        id: *id,
                        label: label.clone(),
                        mention,
                    },
                    Some(_) => Change::MentionAdded { id: *id, mention },
                };
                out.push(self.commit(change));
            }
            ParseEvent::Relation { label, pairs, clean_span, .. } => {
                out.extend(self.open_paragraph(paragraph));
                let group = self.next_group;
                for pair in pairs {
                    for id in [pair.source, pair.target] {
                        if !self.nodes.contains_key(&id) {
                            out.push(self.commit(Change::NodeAdded {
                                id,
                                label: PLACEHOLDER_LABEL.to_string(),
                                placeholder: true,
                                mention: None,
                            }));
                        }
                    }
                    let edge = RelationEdge {
                        edge_id: self.next_edge,
                        label: label.clone(),
                        pair: *pair,
                        group,
                        origin: Origin { paragraph, span: *clean_span },
                    };
                    out.push(self.commit(Change::EdgeAdded { edge }));
                    out.extend(self.reveal_if_reconnected(pair));
                }
            }
            _ => {}
        }
        out
    }

    /// A collapsed-away node that gains an edge to anything but its
    /// collapser becomes visible again.
    fn reveal_if_reconnected(&mut self, pair: &RelationPair) -> Vec<GraphDiff> {
        let mut out = Vec::new();
        if pair.is_self_loop() {
            return out;
        }
        for (id, other) in [(pair.source, pair.target), (pair.target, pair.source)] {
            if let Some(collapser) = self.nodes.get(&id).and_then(|n| n.hidden_by) {
                if collapser != other {
                    out.push(self.commit(Change::VisibilityChanged { id, hidden_by: None }));
                }
            }
        }
        out
    }

    /// Records and applies a change.
    pub(crate) fn commit(&mut self, change: Change) -> GraphDiff {
        self.apply_change(&change);
        self.seq += 1;
        GraphDiff {
            seq: self.seq,
            change,
            animate: false,
        }
    }

    /// Applies a diff produced by another graph.
    pub fn apply_diff(&mut self, diff: &GraphDiff) {
        self.apply_change(&diff.change);
        self.seq = diff.seq;
    }

    fn apply_change(&mut self, change: &Change) {
        match change {
            Change::ParagraphAdded { paragraph } => {
                self.paragraphs.insert(*paragraph);
            }
            Change::NodeAdded { id, label, placeholder, mention } => {
                let mut node = ConceptNode::placeholder(*id);
                node.label = label.clone();
                node.placeholder = *placeholder;
                node.mentions.extend(mention.clone());
                self.nodes.insert(*id, node);
            }
            Change::MentionAdded { id, mention } => {
                if let Some(n) = self.nodes.get_mut(id) {
                    n.mentions.push(mention.clone());
                }
            }
            Change::PlaceholderResolved { id, label, mention }
            | Change::LabelUpgraded { id, label, mention } => {
                if let Some(n) = self.nodes.get_mut(id) {
                    n.mentions.push(mention.clone());
                    n.label = label.clone();
                    n.placeholder = false;
                }
            }
            Change::EdgeAdded { edge } => {
                self.next_edge = self.next_edge.max(edge.edge_id + 1);
                self.next_group = self.next_group.max(edge.group + 1);
                self.paragraphs.insert(edge.origin.paragraph);
                self.edges.insert(edge.edge_id, edge.clone());
            }
            Change::EdgesRemoved { edge_ids } => {
                for id in edge_ids {
                    self.edges.remove(id);
                }
            }
            Change::MentionsRetracted { id, paragraph, spans, label, placeholder } => {
                if let Some(n) = self.nodes.get_mut(id) {
                    n.mentions
                        .retain(|m| !(m.paragraph == *paragraph && spans.contains(&m.span)));
                    n.label = label.clone();
                    n.placeholder = *placeholder;
                }
            }
            Change::NodeTrimmed { id } | Change::NodePruned { id } => {
                self.nodes.remove(id);
                for n in self.nodes.values_mut() {
                    if n.hidden_by == Some(*id) {
                        n.hidden_by = None;
                    }
                }
            }
            Change::NodesMerged { from, into, label, placeholder, rewired } => {
                let moved = self.nodes.remove(from).map(|n| n.mentions).unwrap_or_default();
                if let Some(n) = self.nodes.get_mut(into) {
                    n.mentions.extend(moved);
                    n.mentions.sort_by_key(|m| (m.paragraph, m.span.start));
                    n.label = label.clone();
                    n.placeholder = *placeholder;
                }
                for n in self.nodes.values_mut() {
                    if n.hidden_by == Some(*from) {
                        n.hidden_by = Some(*into);
                    }
                }
                for (edge_id, pair) in rewired {
                    if let Some(e) = self.edges.get_mut(edge_id) {
                        e.pair = *pair;
                    }
                }
            }
            Change::CollapseChanged { id, collapsed, nodes, .. } => {
                if let Some(n) = self.nodes.get_mut(id) {
                    n.collapsed = *collapsed;
                }
                for hidden in nodes {
                    if let Some(n) = self.nodes.get_mut(hidden) {
                        n.hidden_by = collapsed.then_some(*id);
                    }
                }
            }
            Change::VisibilityChanged { id, hidden_by } => {
                if let Some(n) = self.nodes.get_mut(id) {
                    n.hidden_by = *hidden_by;
                }
            }
            Change::SpansShifted { paragraph, from, delta } => {
                let shift = |span: &mut Span| {
                    if span.start >= *from {
                        *span = span.offset_by(*delta);
                    }
                };
                for n in self.nodes.values_mut() {
                    for m in n.mentions.iter_mut().filter(|m| m.paragraph == *paragraph) {
                        shift(&mut m.span);
                    }
                }
                for e in self.edges.values_mut().filter(|e| e.origin.paragraph == *paragraph) {
                    shift(&mut e.origin.span);
                }
            }
        }
    }

    /// Applies every mention event of a paragraph in order.
    pub fn apply_paragraph(&mut self, events: &[ParseEvent], paragraph: usize) -> Vec<GraphDiff> {
        let mut out = self.open_paragraph(paragraph);
        for e in events {
            out.extend(self.apply_event(e, paragraph));
        }
        out
    }

    /// Builds a graph from a whole response, numbering paragraphs from 0 at
    /// each break and rebasing spans to their paragraph.
    pub fn from_events(events: &[ParseEvent]) -> Self {
        let mut g = Self::new();
        g.extend_from_events(events, 0);
        g
    }

    /// Applies response events starting at paragraph `first`.
    pub fn extend_from_events(&mut self, events: &[ParseEvent], first: usize) -> Vec<GraphDiff> {
        let mut out = self.open_paragraph(first);
        let mut paragraph = first;
        let mut base = 0isize;
        for e in events {
            if let ParseEvent::ParagraphBreak { clean_span, .. } = e {
                paragraph += 1;
                base = clean_span.end as isize;
                out.extend(self.open_paragraph(paragraph));
                continue;
            }
            let local = e.clone().shifted(0, -base);
            out.extend(self.apply_event(&local, paragraph));
        }
        out
    }
}
