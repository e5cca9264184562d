use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{GraphError, Origin, SessionGraph};
use crate::annotation::{EntityId, RelationPair, Saliency};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SaliencyFilter {
    HighOnly,
    #[default]
    All,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "paragraphs", rename_all = "kebab-case")]
pub enum ViewScope {
    /// One paragraph's diagram.
    Split(usize),
    /// Union of the selected paragraphs' diagrams.
    Merged(BTreeSet<usize>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeView {
    pub id: EntityId,
    pub label: String,
    pub placeholder: bool,
    pub collapsed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeView {
    pub edge_id: u64,
    pub label: String,
    #[serde(flatten)]
    pub pair: RelationPair,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphView {
    pub nodes: Vec<NodeView>,
    pub edges: Vec<EdgeView>,
}

impl GraphView {
    pub fn node_ids(&self) -> BTreeSet<EntityId> {
        self.nodes.iter().map(|n| n.id).collect()
    }
}

/// Text ranges tied to a node or an edge, for hover linking.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Highlight {
    pub nodes: Vec<EntityId>,
    pub spans: Vec<Origin>,
}

impl SessionGraph {
    /// Nodes and edges to draw for a scope.
    ///
    /// Collapsed-away nodes and self-loops never show. With `HighOnly`, low
    /// edges are dropped and so are nodes whose every edge in scope was low;
    /// nodes with no edge at all stay.
    pub fn visible_subgraph(&self, filter: SaliencyFilter, scope: &ViewScope) -> Result<GraphView, GraphError> {
        let paragraphs: BTreeSet<usize> = match scope {
            ViewScope::Split(p) => [*p].into(),
            ViewScope::Merged(set) if set.is_empty() => return Err(GraphError::EmptySelection),
            ViewScope::Merged(set) => set.clone(),
        };
        if let Some(p) = paragraphs.iter().find(|p| !self.paragraphs.contains(p)) {
            return Err(GraphError::UnknownParagraph(*p));
        }

        let mut ids: BTreeSet<EntityId> = BTreeSet::new();
        for p in &paragraphs {
            ids.extend(self.paragraph_nodes(*p));
        }
        ids.retain(|id| !self.is_hidden(*id));

        let scoped: Vec<_> = self
            .edges
            .values()
            .filter(|e| paragraphs.contains(&e.origin.paragraph))
            .filter(|e| !e.pair.is_self_loop())
            .filter(|e| ids.contains(&e.pair.source) && ids.contains(&e.pair.target))
            .collect();
        let keep = |s: Saliency| filter == SaliencyFilter::All || s == Saliency::High;

        if filter == SaliencyFilter::HighOnly {
            ids.retain(|id| {
                let mut touching = scoped.iter().filter(|e| e.pair.touches(*id)).peekable();
                touching.peek().is_none() || touching.any(|e| keep(e.pair.saliency))
            });
        }

        Ok(GraphView {
            nodes: ids
                .iter()
                .map(|id| {
                    let n = &self.nodes[id];
                    NodeView {
                        id: *id,
                        label: n.label.clone(),
                        placeholder: n.placeholder,
                        collapsed: n.collapsed,
                    }
                })
                .collect(),
            edges: scoped
                .into_iter()
                .filter(|e| keep(e.pair.saliency))
                .map(|e| EdgeView { edge_id: e.edge_id, label: e.label.clone(), pair: e.pair })
                .collect(),
        })
    }

    /// Every mention of a node, across paragraphs.
    pub fn highlight_node(&self, id: EntityId) -> Result<Highlight, GraphError> {
        let n = self.nodes.get(&id).ok_or(GraphError::NotFound(id))?;
        Ok(Highlight {
            nodes: vec![id],
            spans: n
                .mentions
                .iter()
                .map(|m| Origin { paragraph: m.paragraph, span: m.span })
                .collect(),
        })
    }

    /// The relationship token of an edge plus both endpoints' mentions in
    /// the same paragraph.
    pub fn highlight_edge(&self, edge_id: u64) -> Option<Highlight> {
        let e = self.edges.get(&edge_id)?;
        let mut spans = vec![e.origin];
        for id in [e.pair.source, e.pair.target] {
            if let Some(n) = self.nodes.get(&id) {
                spans.extend(
                    n.mentions
                        .iter()
                        .filter(|m| m.paragraph == e.origin.paragraph)
                        .map(|m| Origin { paragraph: m.paragraph, span: m.span }),
                );
            }
        }
        spans.sort();
        spans.dedup();
        Some(Highlight { nodes: vec![e.pair.source, e.pair.target], spans })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::parse_all;

    fn id(v: u32) -> EntityId {
        EntityId::new(v).unwrap()
    }

    #[test]
    fn paragraph_a_high_only() {
        let g = SessionGraph::from_events(&parse_all(include_str!("../../fixtures/paper/paragraph_a.txt")));
        let all = g.visible_subgraph(SaliencyFilter::All, &ViewScope::Split(0)).unwrap();
        assert_eq!(all.nodes.len(), 16);
        assert_eq!(all.edges.len(), 15);
        let high = g.visible_subgraph(SaliencyFilter::HighOnly, &ViewScope::Split(0)).unwrap();
        assert_eq!(high.edges.len(), 6);
        assert!(high.edges.iter().all(|e| e.pair.saliency == Saliency::High));
        for n in &high.nodes {
            assert!(high.edges.iter().any(|e| e.pair.touches(n.id)));
        }
    }

    #[test]
    fn orphans_survive_high_only() {
        let g = SessionGraph::from_events(&parse_all("[A ($N1)] [r ($L, $N1, $N2)] [B ($N2)] [C ($N3)]"));
        let high = g.visible_subgraph(SaliencyFilter::HighOnly, &ViewScope::Split(0)).unwrap();
        assert_eq!(high.node_ids(), [id(3)].into());
    }

    #[test]
    fn self_loops_are_not_drawn() {
        let g = SessionGraph::from_events(&parse_all("[A ($N1)] [r ($H, $N1, $N1)]"));
        let v = g.visible_subgraph(SaliencyFilter::HighOnly, &ViewScope::Split(0)).unwrap();
        assert!(v.edges.is_empty());
        assert_eq!(v.node_ids(), [id(1)].into());
    }

    #[test]
    fn merged_view_unions_paragraphs() {
        let g = SessionGraph::from_events(&parse_all(
            "[A ($N1)] [r ($H, $N1, $N2)] [B ($N2)].\n\n[A ($N1)] [s ($H, $N1, $N3)] [C ($N3)].",
        ));
        let v = g.visible_subgraph(SaliencyFilter::All, &ViewScope::Merged([0, 1].into())).unwrap();
        assert_eq!(v.node_ids(), [id(1), id(2), id(3)].into());
        assert_eq!(v.edges.len(), 2);
        assert_eq!(
            g.visible_subgraph(SaliencyFilter::All, &ViewScope::Merged(BTreeSet::new())),
            Err(GraphError::EmptySelection)
        );
        assert_eq!(
            g.visible_subgraph(SaliencyFilter::All, &ViewScope::Split(5)),
            Err(GraphError::UnknownParagraph(5))
        );
    }

    #[test]
    fn highlight_spans_cross_paragraphs() {
        let g = SessionGraph::from_events(&parse_all("[A ($N1)] x.\n\ny [A ($N1)]."));
        let h = g.highlight_node(id(1)).unwrap();
        assert_eq!(h.spans.iter().map(|o| o.paragraph).collect::<Vec<_>>(), [0, 1]);
    }
}
