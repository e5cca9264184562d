//! User-driven edits: collapse, expand, trim, merge, and the retraction and
//! shifting used when a sentence is replaced.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{longest_mention, Change, GraphDiff, GraphError, Mention, Origin, SessionGraph};
use crate::annotation::{render_annotation, EntityId, Mark, RelationPair, Span};

/// Text edit that keeps the annotated response consistent with a graph edit.
///
/// `span` addresses the annotation by its stripped-text range within the
/// paragraph; the whole annotation is replaced by `replacement`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextRewrite {
    pub paragraph: usize,
    pub span: Span,
    pub replacement: String,
}

impl SessionGraph {
    /// Non-self-loop edges whose endpoints are both visible.
    fn visible_links(&self) -> impl Iterator<Item = &super::RelationEdge> {
        self.edges.values().filter(|e| {
            !e.pair.is_self_loop() && !self.is_hidden(e.pair.source) && !self.is_hidden(e.pair.target)
        })
    }

    pub(crate) fn is_hidden(&self, id: EntityId) -> bool {
        self.nodes.get(&id).is_some_and(|n| n.hidden_by.is_some())
    }

    fn greyed_for(&self, id: EntityId, hidden: &[EntityId]) -> Vec<Origin> {
        let mut greyed: BTreeSet<Origin> = BTreeSet::new();
        for h in hidden {
            if let Some(n) = self.nodes.get(h) {
                greyed.extend(n.mentions.iter().map(|m| Origin { paragraph: m.paragraph, span: m.span }));
            }
        }
        for e in self.edges.values() {
            let other = if e.pair.source == id {
                e.pair.target
            } else if e.pair.target == id {
                e.pair.source
            } else {
                continue;
            };
            if hidden.contains(&other) {
                greyed.insert(e.origin);
            }
        }
        greyed.into_iter().collect()
    }

    /// Hides every neighbour whose visible edges all lead to `id`.
    pub fn collapse(&mut self, id: EntityId) -> Result<Vec<GraphDiff>, GraphError> {
        let node = self.nodes.get(&id).ok_or(GraphError::NotFound(id))?;
        if node.placeholder {
            return Err(GraphError::InvalidTarget(id, "placeholder nodes cannot be collapsed"));
        }
        if node.collapsed {
            return Ok(Vec::new());
        }
        let mut links: BTreeMap<EntityId, Vec<RelationPair>> = BTreeMap::new();
        for e in self.visible_links() {
            links.entry(e.pair.source).or_default().push(e.pair);
            links.entry(e.pair.target).or_default().push(e.pair);
        }
        let hidden: Vec<EntityId> = links
            .get(&id)
            .map(|pairs| {
                pairs
                    .iter()
                    .map(|p| if p.source == id { p.target } else { p.source })
                    .collect::<BTreeSet<_>>()
            })
            .unwrap_or_default()
            .into_iter()
            .filter(|n| links[n].iter().all(|p| p.touches(id)))
            .collect();
        let greyed = self.greyed_for(id, &hidden);
        Ok(vec![self.commit(Change::CollapseChanged { id, collapsed: true, nodes: hidden, greyed })])
    }

    /// Restores the nodes hidden by collapsing `id`.
    pub fn expand(&mut self, id: EntityId) -> Result<Vec<GraphDiff>, GraphError> {
        let node = self.nodes.get(&id).ok_or(GraphError::NotFound(id))?;
        if !node.collapsed {
            return Ok(Vec::new());
        }
        let restored: Vec<EntityId> = self
            .nodes
            .values()
            .filter(|n| n.hidden_by == Some(id))
            .map(|n| n.id)
            .collect();
        let greyed = self.greyed_for(id, &restored);
        Ok(vec![self.commit(Change::CollapseChanged { id, collapsed: false, nodes: restored, greyed })])
    }

    /// Renders a relationship group from its current edges, or its bare label
    /// when none remain.
    fn render_group(&self, group: u64, skip: &BTreeSet<u64>, rewired: &BTreeMap<u64, RelationPair>) -> Option<TextRewrite> {
        let members: Vec<&super::RelationEdge> = self.edges.values().filter(|e| e.group == group).collect();
        let first = members.first()?;
        let pairs: Vec<RelationPair> = members
            .iter()
            .filter(|e| !skip.contains(&e.edge_id))
            .map(|e| rewired.get(&e.edge_id).copied().unwrap_or(e.pair))
            .collect();
        let replacement = if pairs.is_empty() {
            first.label.clone()
        } else {
            render_annotation(&first.label, &Mark::Relation(pairs))
        };
        Some(TextRewrite {
            paragraph: first.origin.paragraph,
            span: first.origin.span,
            replacement,
        })
    }

    /// Placeholders left without any edge once `removed` are gone.
    fn orphaned_placeholders(&self, removed: &BTreeSet<u64>, except: EntityId) -> Vec<EntityId> {
        self.nodes
            .values()
            .filter(|n| n.placeholder && n.id != except)
            .filter(|n| {
                !self
                    .edges
                    .values()
                    .any(|e| !removed.contains(&e.edge_id) && e.pair.touches(n.id))
            })
            .map(|n| n.id)
            .collect()
    }

    /// Removes a node with its incident edges.
    ///
    /// Returns the diffs and the text rewrites that unwrap its mentions and
    /// re-render or unwrap the relationship annotations it took part in.
    pub fn trim(&mut self, id: EntityId) -> Result<(Vec<GraphDiff>, Vec<TextRewrite>), GraphError> {
        let node = self.nodes.get(&id).ok_or(GraphError::NotFound(id))?;
        let mut rewrites: Vec<TextRewrite> = node
            .mentions
            .iter()
            .map(|m| TextRewrite { paragraph: m.paragraph, span: m.span, replacement: m.text.clone() })
            .collect();
        let removed: BTreeSet<u64> = self.incident_edges(id).map(|e| e.edge_id).collect();
        let groups: BTreeSet<u64> = removed.iter().map(|e| self.edges[e].group).collect();
        rewrites.extend(groups.into_iter().filter_map(|g| self.render_group(g, &removed, &BTreeMap::new())));
        rewrites.sort_by_key(|r| (r.paragraph, r.span.start));

        let pruned = self.orphaned_placeholders(&removed, id);
        let mut diffs = Vec::new();
        if !removed.is_empty() {
            diffs.push(self.commit(Change::EdgesRemoved { edge_ids: removed.into_iter().collect() }));
        }
        diffs.push(self.commit(Change::NodeTrimmed { id }));
        for p in pruned {
            diffs.push(self.commit(Change::NodePruned { id: p }));
        }
        Ok((diffs, rewrites))
    }

    /// Merges `from` into `into`: mentions move over, edges are rewired,
    /// and edges that become self-loops or duplicates are dropped.
    pub fn merge_nodes(
        &mut self,
        from: EntityId,
        into: EntityId,
    ) -> Result<(Vec<GraphDiff>, Vec<TextRewrite>), GraphError> {
        if from == into {
            return Err(GraphError::SameNode(from));
        }
        let source = self.nodes.get(&from).ok_or(GraphError::NotFound(from))?;
        let target = self.nodes.get(&into).ok_or(GraphError::NotFound(into))?;

        let mut mentions: Vec<Mention> = target.mentions.clone();
        mentions.extend(source.mentions.iter().cloned());
        mentions.sort_by_key(|m| (m.paragraph, m.span.start));
        let label = longest_mention(&mentions)
            .map(|m| m.text.clone())
            .unwrap_or_else(|| super::PLACEHOLDER_LABEL.to_string());
        let placeholder = mentions.is_empty();

        let mut rewrites: Vec<TextRewrite> = source
            .mentions
            .iter()
            .map(|m| TextRewrite {
                paragraph: m.paragraph,
                span: m.span,
                replacement: render_annotation(&m.text, &Mark::Entity(into)),
            })
            .collect();

        let swap = |id: EntityId| if id == from { into } else { id };
        let mut keys: BTreeSet<(String, RelationPair)> = self
            .edges
            .values()
            .filter(|e| !e.pair.touches(from))
            .map(|e| e.dedup_key())
            .collect();
        let mut removed = BTreeSet::new();
        let mut rewired = BTreeMap::new();
        let mut groups = BTreeSet::new();
        for e in self.edges.values().filter(|e| e.pair.touches(from)) {
            groups.insert(e.group);
            let pair = RelationPair::new(e.pair.saliency, swap(e.pair.source), swap(e.pair.target));
            if pair.is_self_loop() || !keys.insert((e.label.clone(), pair)) {
                removed.insert(e.edge_id);
            } else {
                rewired.insert(e.edge_id, pair);
            }
        }
        rewrites.extend(groups.into_iter().filter_map(|g| self.render_group(g, &removed, &rewired)));
        rewrites.sort_by_key(|r| (r.paragraph, r.span.start));

        let mut diffs = Vec::new();
        if !removed.is_empty() {
            diffs.push(self.commit(Change::EdgesRemoved { edge_ids: removed.into_iter().collect() }));
        }
        diffs.push(self.commit(Change::NodesMerged {
            from,
            into,
            label,
            placeholder,
            rewired: rewired.into_iter().collect(),
        }));
        Ok((diffs, rewrites))
    }

    /// Withdraws every mention and edge annotated inside `range` of a
    /// paragraph. Nodes that keep edges become placeholders; nodes left with
    /// nothing are pruned.
    pub fn retract_range(&mut self, paragraph: usize, range: Span) -> Vec<GraphDiff> {
        let inside = |s: &Span| range.start <= s.start && s.end <= range.end && !(s.is_empty() && s.start == range.end);
        let removed: BTreeSet<u64> = self
            .edges
            .values()
            .filter(|e| e.origin.paragraph == paragraph && inside(&e.origin.span))
            .map(|e| e.edge_id)
            .collect();

        let mut retractions = Vec::new();
        for n in self.nodes.values() {
            let spans: Vec<Span> = n
                .mentions
                .iter()
                .filter(|m| m.paragraph == paragraph && inside(&m.span))
                .map(|m| m.span)
                .collect();
            if spans.is_empty() {
                continue;
            }
            let remaining: Vec<Mention> = n
                .mentions
                .iter()
                .filter(|m| !(m.paragraph == paragraph && spans.contains(&m.span)))
                .cloned()
                .collect();
            let label = longest_mention(&remaining)
                .map(|m| m.text.clone())
                .unwrap_or_else(|| super::PLACEHOLDER_LABEL.to_string());
            retractions.push(Change::MentionsRetracted {
                id: n.id,
                paragraph,
                spans,
                label,
                placeholder: remaining.is_empty(),
            });
        }

        let mut diffs = Vec::new();
        if !removed.is_empty() {
            diffs.push(self.commit(Change::EdgesRemoved { edge_ids: removed.into_iter().collect() }));
        }
        for r in retractions {
            diffs.push(self.commit(r));
        }
        let empty: Vec<EntityId> = self
            .nodes
            .values()
            .filter(|n| n.mentions.is_empty() && !self.edges.values().any(|e| e.pair.touches(n.id)))
            .map(|n| n.id)
            .collect();
        for id in empty {
            diffs.push(self.commit(Change::NodePruned { id }));
        }
        diffs
    }

    /// Moves mentions and edge origins at or after `from` by `delta`.
    pub fn shift_spans(&mut self, paragraph: usize, from: usize, delta: isize) -> Vec<GraphDiff> {
        if delta == 0 {
            return Vec::new();
        }
        vec![self.commit(Change::SpansShifted { paragraph, from, delta })]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::{parse_all, Saliency};
    use crate::graph::{ConceptNode, RelationEdge};

    fn id(v: u32) -> EntityId {
        EntityId::new(v).unwrap()
    }

    fn graph(text: &str) -> SessionGraph {
        SessionGraph::from_events(&parse_all(text))
    }

    fn structure(g: &SessionGraph) -> (Vec<ConceptNode>, Vec<RelationEdge>) {
        (g.nodes().cloned().collect(), g.edges().cloned().collect())
    }

    #[test]
    fn collapse_hides_leaves_only() {
        // 1 - 2, 1 - 3, 3 - 4: only 2 is a leaf of 1.
        let mut g = graph("[A ($N1)] [r ($H, $N1, $N2)] [B ($N2)] [s ($H, $N1, $N3)] [C ($N3)] [t ($L, $N3, $N4)] [D ($N4)]");
        let diffs = g.collapse(id(1)).unwrap();
        let Change::CollapseChanged { nodes, greyed, collapsed, .. } = &diffs[0].change else { panic!() };
        assert!(collapsed);
        assert_eq!(nodes, &[id(2)]);
        // B's mention plus the "r" token.
        assert_eq!(greyed.len(), 2);
        assert!(g.node(id(1)).unwrap().collapsed);
    }

    #[test]
    fn collapse_without_leaves_emits_empty_change() {
        let mut g = graph("[A ($N1)] [r ($H, $N1, $N2)] [B ($N2)] [s ($H, $N2, $N3)] [C ($N3)] [t ($H, $N3, $N1)]");
        let diffs = g.collapse(id(1)).unwrap();
        let Change::CollapseChanged { nodes, .. } = &diffs[0].change else { panic!() };
        assert!(nodes.is_empty());
    }

    #[test]
    fn collapse_rejects_placeholders_and_unknown_ids() {
        let mut g = graph("[A ($N1)] [r ($H, $N1, $N2)]");
        assert_eq!(g.collapse(id(2)), Err(GraphError::InvalidTarget(id(2), "placeholder nodes cannot be collapsed")));
        assert_eq!(g.collapse(id(9)), Err(GraphError::NotFound(id(9))));
    }

    #[test]
    fn expand_restores_visibility() {
        let mut g = graph("[A ($N1)] [r ($H, $N1, $N2)] [B ($N2)] [s ($L, $N1, $N3)] [C ($N3)]");
        let before = structure(&g);
        g.collapse(id(1)).unwrap();
        assert!(g.is_hidden(id(2)) && g.is_hidden(id(3)));
        g.expand(id(1)).unwrap();
        assert_eq!(structure(&g), before);
        assert!(g.expand(id(1)).unwrap().is_empty());
    }

    #[test]
    fn trim_example_rewrites_text() {
        let text = "[Apples ($N1)] [are ($H, $N1, $N2)] [fruit ($N2)] and [contain ($L, $N1, $N3)] [fiber ($N3)].";
        let mut g = graph(text);
        let (diffs, rewrites) = g.trim(id(1)).unwrap();
        assert!(matches!(diffs.last().unwrap().change, Change::NodeTrimmed { .. }));
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.edge_count(), 0);
        let replaced: Vec<&str> = rewrites.iter().map(|r| r.replacement.as_str()).collect();
        assert_eq!(replaced, ["Apples", "are", "contain"]);
    }

    #[test]
    fn trim_keeps_remaining_pairs_of_a_group() {
        let mut g = graph("[A ($N1)] [B ($N2)] [C ($N3)] [link ($H, $N1, $N2; $L, $N1, $N3)]");
        let (_, rewrites) = g.trim(id(2)).unwrap();
        assert_eq!(rewrites.last().unwrap().replacement, "[link ($L, $N1, $N3)]");
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn trim_isolated_node_restores_structure() {
        let mut g = graph("[A ($N1)] [r ($H, $N1, $N2)] [B ($N2)]");
        let before = structure(&g);
        g.apply_event(&parse_all("[Z ($N9)]")[0], 0);
        g.trim(id(9)).unwrap();
        assert_eq!(structure(&g), before);
    }

    #[test]
    fn trim_prunes_placeholders_left_without_edges() {
        let mut g = graph("[A ($N1)] [r ($H, $N1, $N2)]");
        assert_eq!(g.placeholder_count(), 1);
        g.trim(id(1)).unwrap();
        assert_eq!(g.node_count(), 0);
    }

    #[test]
    fn merge_coreference_example() {
        let text = "[Apple ($N1)] is red. [It ($N3)] [helps ($H, $N3, $N4)] [digestion ($N4)].";
        let mut g = graph(text);
        let (diffs, rewrites) = g.merge_nodes(id(3), id(1)).unwrap();
        let Change::NodesMerged { label, rewired, .. } = &diffs.last().unwrap().change else { panic!() };
        assert_eq!(label, "Apple");
        assert_eq!(rewired[0].1, RelationPair::new(Saliency::High, id(1), id(4)));
        let n = g.node(id(1)).unwrap();
        assert_eq!(n.mentions.iter().map(|m| m.text.as_str()).collect::<Vec<_>>(), ["Apple", "It"]);
        assert!(g.node(id(3)).is_none());
        assert_eq!(rewrites[0].replacement, "[It ($N1)]");
        assert_eq!(rewrites[1].replacement, "[helps ($H, $N1, $N4)]");
        assert_eq!(g.merge_nodes(id(3), id(1)), Err(GraphError::NotFound(id(3))));
    }

    #[test]
    fn merge_drops_self_loops_and_duplicates() {
        let mut g = graph(
            "[A ($N1)] [B ($N2)] [C ($N3)] [r ($H, $N1, $N2)] [r ($H, $N1, $N3)] [s ($L, $N2, $N3)]",
        );
        let (diffs, _) = g.merge_nodes(id(3), id(2)).unwrap();
        let Change::EdgesRemoved { edge_ids } = &diffs[0].change else { panic!() };
        assert_eq!(edge_ids, &[1, 2]);
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.merge_nodes(id(2), id(2)), Err(GraphError::SameNode(id(2))));
    }

    #[test]
    fn retract_then_shift() {
        let text = "[A ($N1)] [r ($H, $N1, $N2)] [B ($N2)]. [C ($N3)] [s ($L, $N3, $N1)] [A ($N1)].";
        let mut g = graph(text);
        // First sentence is 0..6 in stripped text ("A r B.").
        g.retract_range(0, Span::new(0, 6));
        let a = g.node(id(1)).unwrap();
        assert_eq!(a.mentions.len(), 1);
        assert!(g.node(id(2)).is_none());
        assert_eq!(g.edge_count(), 1);
        g.shift_spans(0, 6, 4);
        assert_eq!(g.node(id(3)).unwrap().mentions[0].span, Span::new(11, 12));
    }
}
