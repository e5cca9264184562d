//! Scoring predicted annotations against a gold reference.
//!
//! Matching policy:
//!
//! * An entity mention matches a gold mention when their stripped-text spans
//!   overlap and their normalized labels are equal or one contains the other.
//!   Each gold mention takes the best candidate: equal label first, then
//!   same start, then largest overlap.
//! * Predicted ids map to gold ids through the first matched mention of each
//!   id, and the other way round. A matched mention whose ids disagree with
//!   either mapping is an incorrect co-reference.
//! * A relationship pair matches a gold pair when the relationship spans
//!   overlap, labels are compatible and the mapped endpoints agree. Saliency
//!   is ignored for matching and tallied separately.
//!
//! Totals follow the report arithmetic: `total = correct + missing` and
//! `extracted = correct + erroneous`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write};

use serde::{Deserialize, Serialize};

use crate::annotation::{EntityId, ParseEvent, RelationPair, Span};
use crate::diagnostics::{detect, DiagnosticKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrfScore {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

impl PrfScore {
    pub const PERFECT: PrfScore = PrfScore { precision: 1.0, recall: 1.0, f_score: 1.0 };
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PrfError {
    #[error("correct count {correct} exceeds extracted count {extracted}")]
    ExceedsExtracted { correct: usize, extracted: usize },
    #[error("correct count {correct} exceeds total count {total}")]
    ExceedsTotal { correct: usize, total: usize },
}

pub fn compute_prf(total: usize, extracted: usize, correct: usize) -> Result<PrfScore, PrfError> {
    if correct > extracted {
        return Err(PrfError::ExceedsExtracted { correct, extracted });
    }
    if correct > total {
        return Err(PrfError::ExceedsTotal { correct, total });
    }
    let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    let precision = ratio(correct, extracted);
    let recall = ratio(correct, total);
    let f_score = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(PrfScore { precision, recall, f_score })
}

/// Count columns of one annotation class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub total: usize,
    pub extracted: usize,
    pub correct: usize,
}

impl Counts {
    pub fn erroneous(&self) -> usize {
        self.extracted - self.correct
    }

    pub fn missing(&self) -> usize {
        self.total - self.correct
    }

    pub fn prf(&self) -> PrfScore {
        compute_prf(self.total, self.extracted, self.correct).expect("counts are consistent by construction")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("predicted and gold texts differ after whitespace normalization (first difference at byte {0})")]
    TextMismatch(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldReport {
    pub counts: BTreeMap<DiagnosticKind, usize>,
    pub entities: Counts,
    pub relationships: Counts,
    pub entity_prf: PrfScore,
    pub relationship_prf: PrfScore,
    /// Matched pairs whose saliency differs from gold.
    pub saliency_mismatches: usize,
    /// Orphans and dead-ends found by the detector in the prediction.
    pub detected_orphans: usize,
    pub detected_dead_ends: usize,
}

impl GoldReport {
    pub fn count(&self, kind: DiagnosticKind) -> usize {
        self.counts.get(&kind).copied().unwrap_or(0)
    }

    pub fn table(&self) -> TableReport {
        TableReport::new(self.entities, self.relationships, &self.counts, self.detected_orphans, self.detected_dead_ends)
    }
}

/// Collapses whitespace runs to one space and trims, keeping a map from
/// every original byte offset to its offset in the normalized text.
fn normalize_with_map(text: &str) -> (String, Vec<usize>) {
    let mut out = String::with_capacity(text.len());
    let mut map = vec![0; text.len() + 1];
    let mut pending_space = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            pending_space = !out.is_empty();
        } else {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            map[i..i + c.len_utf8()].fill(out.len());
            out.push(c);
            continue;
        }
        map[i..i + c.len_utf8()].fill(out.len() + usize::from(pending_space));
    }
    map[text.len()] = out.len();
    (out, map)
}

fn normalize_label(label: &str) -> String {
    label.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn compatible(a: &str, b: &str) -> bool {
    a == b || a.contains(b) || b.contains(a)
}

#[derive(Debug, Clone)]
struct EntityMention {
    span: Span,
    id: EntityId,
    label: String,
}

#[derive(Debug, Clone)]
struct PairMention {
    span: Span,
    label: String,
    pair: RelationPair,
}

struct Extracted {
    entities: Vec<EntityMention>,
    pairs: Vec<PairMention>,
    mentioned: BTreeSet<EntityId>,
}

fn extract(events: &[ParseEvent]) -> (String, Extracted) {
    let clean: String = events.iter().map(ParseEvent::clean_text).collect();
    let (norm, map) = normalize_with_map(&clean);
    let base = events.first().map_or(0, |e| e.clean_span().start);
    let to_norm = |s: Span| Span::new(map[s.start - base], map[s.end - base]);
    let mut x = Extracted { entities: Vec::new(), pairs: Vec::new(), mentioned: BTreeSet::new() };
    for e in events {
        match e {
            ParseEvent::Entity { id, label, clean_span, .. } => {
                x.mentioned.insert(*id);
                x.entities.push(EntityMention { span: to_norm(*clean_span), id: *id, label: normalize_label(label) });
            }
            ParseEvent::Relation { label, pairs, clean_span, .. } => {
                for p in pairs {
                    x.pairs.push(PairMention { span: to_norm(*clean_span), label: normalize_label(label), pair: *p });
                }
            }
            _ => {}
        }
    }
    (norm, x)
}

/// Scores predicted events against gold events over the same text.
pub fn score_against_gold(predicted: &[ParseEvent], gold: &[ParseEvent]) -> Result<GoldReport, EvalError> {
    let (pred_text, pred) = extract(predicted);
    let (gold_text, gold_x) = extract(gold);
    if pred_text != gold_text {
        let at = pred_text
            .bytes()
            .zip(gold_text.bytes())
            .position(|(a, b)| a != b)
            .unwrap_or(pred_text.len().min(gold_text.len()));
        return Err(EvalError::TextMismatch(at));
    }

    let mut counts: BTreeMap<DiagnosticKind, usize> = BTreeMap::new();
    let mut bump = |k: DiagnosticKind| *counts.entry(k).or_default() += 1;

    // Entities.
    let mut pred_used = vec![false; pred.entities.len()];
    let mut matches: Vec<(usize, usize)> = Vec::new();
    for (gi, g) in gold_x.entities.iter().enumerate() {
        let best = pred
            .entities
            .iter()
            .enumerate()
            .filter(|(pi, p)| !pred_used[*pi] && p.span.overlaps(&g.span) && compatible(&p.label, &g.label))
            .max_by_key(|(pi, p)| {
                (p.label == g.label, p.span.start == g.span.start, p.span.overlap_len(&g.span), std::cmp::Reverse(*pi))
            })
            .map(|(pi, _)| pi);
        match best {
            Some(pi) => {
                pred_used[pi] = true;
                matches.push((pi, gi));
            }
            None => bump(DiagnosticKind::MissingEntityPhrase),
        }
    }
    for (_, p) in pred.entities.iter().enumerate().filter(|(pi, _)| !pred_used[*pi]) {
        let partial = gold_x
            .entities
            .iter()
            .any(|g| g.span.overlaps(&p.span) && g.label != p.label && g.label.contains(&p.label));
        bump(if partial { DiagnosticKind::IncompleteEntity } else { DiagnosticKind::IncorrectEntity });
    }

    let mut pred_to_gold: BTreeMap<EntityId, EntityId> = BTreeMap::new();
    let mut gold_to_pred: BTreeMap<EntityId, EntityId> = BTreeMap::new();
    let mut by_pred_order = matches.clone();
    by_pred_order.sort_by_key(|(pi, _)| *pi);
    for (pi, gi) in &by_pred_order {
        pred_to_gold.entry(pred.entities[*pi].id).or_insert(gold_x.entities[*gi].id);
    }
    let mut by_gold_order = matches.clone();
    by_gold_order.sort_by_key(|(_, gi)| *gi);
    for (pi, gi) in &by_gold_order {
        gold_to_pred.entry(gold_x.entities[*gi].id).or_insert(pred.entities[*pi].id);
    }
    let mut entity_correct = 0;
    for (pi, gi) in &matches {
        let (p, g) = (pred.entities[*pi].id, gold_x.entities[*gi].id);
        if pred_to_gold[&p] == g && gold_to_pred[&g] == p {
            entity_correct += 1;
        } else {
            bump(DiagnosticKind::IncorrectCoreference);
        }
    }

    // Relationships.
    let map = |id: EntityId| pred_to_gold.get(&id).copied();
    let mapped = |p: &RelationPair| Some((map(p.source)?, map(p.target)?));
    let mut gold_used = vec![false; gold_x.pairs.len()];
    let mut pred_done = vec![false; pred.pairs.len()];
    let mut relation_correct = 0;
    let mut saliency_mismatches = 0;

    let near = |p: &PairMention, g: &PairMention| p.span.overlaps(&g.span) && compatible(&p.label, &g.label);
    for (gi, g) in gold_x.pairs.iter().enumerate() {
        let hit = pred.pairs.iter().enumerate().find(|(pi, p)| {
            !pred_done[*pi] && near(p, g) && mapped(&p.pair) == Some((g.pair.source, g.pair.target))
        });
        if let Some((pi, p)) = hit {
            pred_done[pi] = true;
            gold_used[gi] = true;
            if p.pair.saliency != g.pair.saliency {
                saliency_mismatches += 1;
            }
            if p.label != g.label && g.label.contains(&p.label) {
                bump(DiagnosticKind::IncompleteRelationship);
            } else {
                relation_correct += 1;
            }
        }
    }
    for (gi, g) in gold_x.pairs.iter().enumerate() {
        if gold_used[gi] {
            continue;
        }
        let hit = pred.pairs.iter().enumerate().find(|(pi, p)| {
            !pred_done[*pi] && near(p, g) && mapped(&p.pair) == Some((g.pair.target, g.pair.source))
        });
        if let Some((pi, _)) = hit {
            pred_done[pi] = true;
            gold_used[gi] = true;
            bump(DiagnosticKind::ReversedRelationship);
        }
    }
    // Remaining predicted pairs are wrong; each takes the place of a gold
    // pair annotated at the same spot, if any.
    for (pi, p) in pred.pairs.iter().enumerate() {
        if pred_done[pi] {
            continue;
        }
        pred_done[pi] = true;
        let dead_end = !pred.mentioned.contains(&p.pair.source) || !pred.mentioned.contains(&p.pair.target);
        bump(if dead_end {
            DiagnosticKind::DeadEndRelationship
        } else {
            DiagnosticKind::MisattributedRelationship
        });
        if let Some(gi) = (0..gold_x.pairs.len()).find(|gi| !gold_used[*gi] && gold_x.pairs[*gi].span.overlaps(&p.span)) {
            gold_used[gi] = true;
        }
    }
    for _ in gold_used.iter().filter(|u| !**u) {
        bump(DiagnosticKind::MissingRelationship);
    }

    let entities = Counts {
        extracted: pred.entities.len(),
        correct: entity_correct,
        total: entity_correct + counts.get(&DiagnosticKind::MissingEntityPhrase).copied().unwrap_or(0),
    };
    let relationships = Counts {
        extracted: pred.pairs.len(),
        correct: relation_correct,
        total: relation_correct + counts.get(&DiagnosticKind::MissingRelationship).copied().unwrap_or(0),
    };
    let detected = detect(predicted);
    Ok(GoldReport {
        entity_prf: entities.prf(),
        relationship_prf: relationships.prf(),
        entities,
        relationships,
        counts,
        saliency_mismatches,
        detected_orphans: detected.iter().filter(|d| d.kind == DiagnosticKind::OrphanNode).count(),
        detected_dead_ends: detected.iter().filter(|d| d.kind == DiagnosticKind::DeadEndRelationship).count(),
    })
}

/// One error row: count and its share of the class total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub kind: DiagnosticKind,
    pub count: usize,
    pub percent: f64,
}

/// Report laid out like the technical evaluation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableReport {
    pub entities: Counts,
    pub entity_prf: PrfScore,
    pub entity_errors: Vec<ErrorRow>,
    pub relationships: Counts,
    pub relationship_prf: PrfScore,
    pub relationship_errors: Vec<ErrorRow>,
    pub orphan_nodes: usize,
    /// Orphans over extracted entity phrases.
    pub orphan_rate: f64,
    pub dead_ends: usize,
    /// Dead-ends over total relationships.
    pub dead_end_rate_total: f64,
    /// Dead-ends over extracted relationships.
    pub dead_end_rate_extracted: f64,
}

fn percent(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        100.0 * n as f64 / d as f64
    }
}

impl TableReport {
    pub fn new(
        entities: Counts,
        relationships: Counts,
        counts: &BTreeMap<DiagnosticKind, usize>,
        orphan_nodes: usize,
        dead_ends: usize,
    ) -> Self {
        use DiagnosticKind::*;
        let rows = |kinds: &[DiagnosticKind], total: usize| {
            kinds
                .iter()
                .map(|k| {
                    let count = counts.get(k).copied().unwrap_or(0);
                    ErrorRow { kind: *k, count, percent: percent(count, total) }
                })
                .collect()
        };
        Self {
            entity_prf: entities.prf(),
            entity_errors: rows(
                &[MissingEntityPhrase, IncorrectEntity, IncompleteEntity, IncorrectCoreference],
                entities.total,
            ),
            relationship_prf: relationships.prf(),
            relationship_errors: rows(
                &[
                    MissingRelationship,
                    DeadEndRelationship,
                    ReversedRelationship,
                    IncompleteRelationship,
                    MisattributedRelationship,
                ],
                relationships.total,
            ),
            orphan_rate: percent(orphan_nodes, entities.extracted),
            dead_end_rate_total: percent(dead_ends, relationships.total),
            dead_end_rate_extracted: percent(dead_ends, relationships.extracted),
            entities,
            relationships,
            orphan_nodes,
            dead_ends,
        }
    }
}

impl fmt::Display for TableReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        let pct = |v: f64| format!("{:.2}%", v);
        let class = |out: &mut String, name: &str, unit: &str, c: &Counts, prf: &PrfScore, errors: &[ErrorRow]| {
            let _ = writeln!(out, "{name}");
            let _ = writeln!(out, "  {:<40}{:>8}", format!("Total {unit}"), c.total);
            let _ = writeln!(out, "  {:<40}{:>8}", format!("Total Extracted {unit}"), c.extracted);
            let _ = writeln!(out, "  {:<40}{:>8}", format!("Correct Extracted {unit}"), c.correct);
            let _ = writeln!(out, "  {:<40}{:>8}", format!("Erroneous Extracted {unit}"), c.erroneous());
            let _ = writeln!(out, "  {:<40}{:>8}", "Precision", pct(100.0 * prf.precision));
            let _ = writeln!(out, "  {:<40}{:>8}", "Recall", pct(100.0 * prf.recall));
            let _ = writeln!(out, "  {:<40}{:>8}", "F-score", pct(100.0 * prf.f_score));
            for row in errors {
                let _ = writeln!(out, "  {:<40}{:>8}{:>10}", row.kind.title(), row.count, pct(row.percent));
            }
        };
        class(&mut out, "Node Annotation", "Entity Phrases", &self.entities, &self.entity_prf, &self.entity_errors);
        class(
            &mut out,
            "Relationship Annotation",
            "Relationships",
            &self.relationships,
            &self.relationship_prf,
            &self.relationship_errors,
        );
        let _ = writeln!(out, "Detectable Errors");
        let _ = writeln!(out, "  {:<40}{:>8}{:>10}", "Orphan Nodes", self.orphan_nodes, pct(self.orphan_rate));
        let _ = writeln!(
            out,
            "  {:<40}{:>8}{:>10}  ({} of extracted)",
            "Dead-end Relationships",
            self.dead_ends,
            pct(self.dead_end_rate_total),
            pct(self.dead_end_rate_extracted)
        );
        f.write_str(&out)
    }
}
