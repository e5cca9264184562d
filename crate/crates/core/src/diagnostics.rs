//! Annotation error kinds and the detector for the machine-detectable ones.
//!
//! Orphan nodes and dead-end relationships are judged against a [`Scope`]:
//! the ids mentioned and the ids taking part in a pair anywhere in the
//! response (or in the part of it streamed so far).

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::annotation::{split_paragraphs, EntityId, Irregularity, ParseEvent, RelationPair, Span};
use crate::sentences::{segment, sentence_of};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiagnosticKind {
    OrphanNode,
    DeadEndRelationship,
    MalformedSyntax,
    RepeatedTokenArtifact,
    SelfLoopPair,
    /// A corrected sentence reused an id that belongs to an unrelated entity.
    RemappedId,
    MissingEntityPhrase,
    IncorrectEntity,
    IncompleteEntity,
    IncorrectCoreference,
    MissingRelationship,
    IncompleteRelationship,
    ReversedRelationship,
    MisattributedRelationship,
}

impl DiagnosticKind {
    pub const CODED: [DiagnosticKind; 8] = [
        DiagnosticKind::MissingEntityPhrase,
        DiagnosticKind::IncorrectEntity,
        DiagnosticKind::IncompleteEntity,
        DiagnosticKind::IncorrectCoreference,
        DiagnosticKind::MissingRelationship,
        DiagnosticKind::IncompleteRelationship,
        DiagnosticKind::ReversedRelationship,
        DiagnosticKind::MisattributedRelationship,
    ];

    /// Whether the kind can only be established against a gold reference.
    pub fn is_coded(self) -> bool {
        Self::CODED.contains(&self)
    }

    pub fn is_entity_error(self) -> bool {
        matches!(
            self,
            DiagnosticKind::OrphanNode
                | DiagnosticKind::MissingEntityPhrase
                | DiagnosticKind::IncorrectEntity
                | DiagnosticKind::IncompleteEntity
                | DiagnosticKind::IncorrectCoreference
        )
    }

    pub fn title(self) -> &'static str {
        match self {
            DiagnosticKind::OrphanNode => "Orphan Entities",
            DiagnosticKind::DeadEndRelationship => "Dead-end Relationships",
            DiagnosticKind::MalformedSyntax => "Malformed Syntax",
            DiagnosticKind::RepeatedTokenArtifact => "Repeated Tokens",
            DiagnosticKind::SelfLoopPair => "Self-loop Pairs",
            DiagnosticKind::RemappedId => "Remapped Ids",
            DiagnosticKind::MissingEntityPhrase => "Missing Entity Phrases",
            DiagnosticKind::IncorrectEntity => "Incorrect Entities",
            DiagnosticKind::IncompleteEntity => "Incomplete Entities",
            DiagnosticKind::IncorrectCoreference => "Incorrect Coreferences",
            DiagnosticKind::MissingRelationship => "Missing Relationships",
            DiagnosticKind::IncompleteRelationship => "Incomplete Relationships",
            DiagnosticKind::ReversedRelationship => "Reversed Relationships",
            DiagnosticKind::MisattributedRelationship => "Misattributed Relationships",
        }
    }
}

impl fmt::Display for DiagnosticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).map_err(|_| fmt::Error)?;
        f.write_str(v.as_str().unwrap_or_default())
    }
}

/// Hard diagnostics trigger a correction; soft ones are informational.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Soft,
    Hard,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    pub severity: Severity,
    pub paragraph: usize,
    pub sentence: Option<usize>,
    /// Entity ids concerned. For dead-ends, the ids never mentioned.
    pub ids: Vec<EntityId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair: Option<RelationPair>,
    /// Location in the paragraph's stripped text.
    pub span: Span,
    pub message: String,
}

impl Diagnostic {
    pub fn is_hard(&self) -> bool {
        self.severity == Severity::Hard
    }
}

/// Ids mentioned, and ids taking part in a pair, over some stretch of text.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Scope {
    pub mentioned: BTreeSet<EntityId>,
    pub related: BTreeSet<EntityId>,
}

impl Scope {
    pub fn from_events(events: &[ParseEvent]) -> Self {
        let mut s = Self::default();
        s.extend(events);
        s
    }

    pub fn extend(&mut self, events: &[ParseEvent]) {
        for e in events {
            match e {
                ParseEvent::Entity { id, .. } => {
                    self.mentioned.insert(*id);
                }
                ParseEvent::Relation { pairs, .. } => {
                    for p in pairs {
                        self.related.insert(p.source);
                        self.related.insert(p.target);
                    }
                }
                _ => {}
            }
        }
    }
}

/// Detects problems across a whole response, judging orphans and dead-ends
/// at response scope.
pub fn detect(events: &[ParseEvent]) -> Vec<Diagnostic> {
    let scope = Scope::from_events(events);
    split_paragraphs(events)
        .iter()
        .enumerate()
        .flat_map(|(k, p)| detect_paragraph(p, k, &scope))
        .collect()
}

/// Detects problems in one paragraph against the given scope.
///
/// Spans in the output are relative to the paragraph's first event.
pub fn detect_paragraph(events: &[ParseEvent], paragraph: usize, scope: &Scope) -> Vec<Diagnostic> {
    let sentences = segment(events);
    let base = events.first().map_or(0, |e| e.clean_span().start);
    let local = |s: Span| s.offset_by(-(base as isize));
    let diag = |kind, severity, span: Span, ids: Vec<EntityId>, message: String| Diagnostic {
        kind,
        severity,
        paragraph,
        sentence: sentence_of(&sentences, span),
        ids,
        relation: None,
        pair: None,
        span: local(span),
        message,
    };

    let mut out = Vec::new();
    let mut orphans_seen = BTreeSet::new();
    for (i, e) in events.iter().enumerate() {
        match e {
            ParseEvent::Entity { id, label, clean_span, .. } => {
                if !scope.related.contains(id) && orphans_seen.insert(*id) {
                    out.push(diag(
                        DiagnosticKind::OrphanNode,
                        Severity::Hard,
                        *clean_span,
                        vec![*id],
                        format!("{id} ({label}) is not connected by any relationship"),
                    ));
                }
            }
            ParseEvent::Relation { label, pairs, clean_span, .. } => {
                for p in pairs {
                    let missing: Vec<EntityId> = [p.source, p.target]
                        .into_iter()
                        .filter(|id| !scope.mentioned.contains(id))
                        .collect::<BTreeSet<_>>()
                        .into_iter()
                        .collect();
                    if !missing.is_empty() {
                        let names: Vec<String> = missing.iter().map(ToString::to_string).collect();
                        out.push(Diagnostic {
                            relation: Some(label.clone()),
                            pair: Some(*p),
                            ..diag(
                                DiagnosticKind::DeadEndRelationship,
                                Severity::Hard,
                                *clean_span,
                                missing,
                                format!("\"{label}\" ({p}) refers to {} which never appear", names.join(", ")),
                            )
                        });
                    }
                    if p.is_self_loop() {
                        out.push(Diagnostic {
                            relation: Some(label.clone()),
                            pair: Some(*p),
                            ..diag(
                                DiagnosticKind::SelfLoopPair,
                                Severity::Soft,
                                *clean_span,
                                vec![p.source],
                                format!("\"{label}\" relates {} to itself", p.source),
                            )
                        });
                    }
                }
            }
            ParseEvent::Malformed { text, reason, clean_span, .. } => {
                out.push(diag(
                    DiagnosticKind::MalformedSyntax,
                    Severity::Hard,
                    *clean_span,
                    Vec::new(),
                    format!("{reason}: {}", abbreviate(text)),
                ));
            }
            _ => {}
        }

        for irregularity in e.irregularities() {
            let what = match irregularity {
                Irregularity::LowercaseMarker => "lowercase marker",
                Irregularity::StrayDollar => "stray \"$\" before the payload",
            };
            out.push(diag(
                DiagnosticKind::MalformedSyntax,
                Severity::Soft,
                e.clean_span(),
                mention_ids(e),
                format!("{what} in \"{}\"", e.clean_text()),
            ));
        }

        if e.is_mention() && i > 0 && repeats_label(&events[i - 1], e.clean_text()) {
            out.push(diag(
                DiagnosticKind::RepeatedTokenArtifact,
                Severity::Soft,
                e.clean_span(),
                mention_ids(e),
                format!("\"{}\" is repeated just before its annotation", e.clean_text()),
            ));
        }
    }
    out
}

fn mention_ids(e: &ParseEvent) -> Vec<EntityId> {
    match e {
        ParseEvent::Entity { id, .. } => vec![*id],
        _ => Vec::new(),
    }
}

/// Whether `previous` is plain text ending in `label` as a whole phrase.
fn repeats_label(previous: &ParseEvent, label: &str) -> bool {
    let ParseEvent::Text { text, .. } = previous else {
        return false;
    };
    let head = text.trim_end().to_lowercase();
    let label = label.trim().to_lowercase();
    if label.is_empty() || !head.ends_with(&label) {
        return false;
    }
    head[..head.len() - label.len()]
        .chars()
        .next_back()
        .is_none_or(|c| !c.is_alphanumeric())
}

fn abbreviate(text: &str) -> String {
    const MAX: usize = 40;
    if text.chars().count() <= MAX {
        text.to_string()
    } else {
        format!("{}...", text.chars().take(MAX).collect::<String>())
    }
}

/// Ids flagged as orphans, in order of first appearance.
pub fn orphan_ids(diagnostics: &[Diagnostic]) -> Vec<EntityId> {
    let mut seen = BTreeSet::new();
    diagnostics
        .iter()
        .filter(|d| d.kind == DiagnosticKind::OrphanNode)
        .flat_map(|d| d.ids.iter().copied())
        .filter(|id| seen.insert(*id))
        .collect()
}

/// Labels of relationships flagged as dead-ends, without repeats.
pub fn dead_end_labels(diagnostics: &[Diagnostic]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for d in diagnostics.iter().filter(|d| d.kind == DiagnosticKind::DeadEndRelationship) {
        if let Some(label) = &d.relation {
            if !out.contains(label) {
                out.push(label.clone());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::parse_all;

    fn id(v: u32) -> EntityId {
        EntityId::new(v).unwrap()
    }

    fn kinds(text: &str) -> Vec<(DiagnosticKind, Severity)> {
        detect(&parse_all(text)).into_iter().map(|d| (d.kind, d.severity)).collect()
    }

    #[test]
    fn paper_paragraphs() {
        assert_eq!(detect(&parse_all(include_str!("../fixtures/paper/paragraph_a.txt"))), Vec::new());
        assert_eq!(detect(&parse_all(include_str!("../fixtures/paper/paragraph_c.txt"))), Vec::new());
        // B keeps the stray "$" of "[working on $($L, ...)]".
        let b = detect(&parse_all(include_str!("../fixtures/paper/paragraph_b.txt")));
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].severity, Severity::Soft);
        assert_eq!(b[0].message, "stray \"$\" before the payload in \"working on\"");
    }

    #[test]
    fn dead_end_example_names_the_unmentioned_id() {
        let found = detect(&parse_all(include_str!("../fixtures/paper/error_dead_end.txt")));
        let dead: Vec<&Diagnostic> = found.iter().filter(|d| d.kind == DiagnosticKind::DeadEndRelationship).collect();
        assert_eq!(dead.len(), 3);
        assert!(dead.iter().all(|d| d.ids == [id(13)]));
        assert_eq!(dead_end_labels(&found), ["emphasized", "the importance of"]);
    }

    #[test]
    fn orphans_once_per_paragraph() {
        let text = "[Ants ($N1)] [eat ($H, $N1, $N2)] [leaves ($N2)]. [Crows ($N3)] and [more crows ($N3)].";
        let found = detect(&parse_all(text));
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].kind, DiagnosticKind::OrphanNode);
        assert_eq!(found[0].sentence, Some(1));
        assert_eq!(orphan_ids(&found), [id(3)]);
    }

    #[test]
    fn orphanhood_uses_response_scope() {
        let text = "[A ($N1)] stands alone.\n\n[B ($N2)] [knows ($H, $N2, $N1)] [A ($N1)].";
        assert!(detect(&parse_all(text)).is_empty());
        let first = &split_paragraphs(&parse_all(text))[0];
        let partial = detect_paragraph(first, 0, &Scope::from_events(first));
        assert_eq!(partial.len(), 1);
    }

    #[test]
    fn syntax_level_kinds() {
        use DiagnosticKind::*;
        use Severity::*;
        assert_eq!(
            kinds(include_str!("../fixtures/malformed/lowercase.txt")),
            [(MalformedSyntax, Soft), (MalformedSyntax, Soft)]
        );
        assert_eq!(kinds(include_str!("../fixtures/malformed/repeated_token.txt")), [(RepeatedTokenArtifact, Soft)]);
        assert_eq!(kinds(include_str!("../fixtures/malformed/self_loop.txt")), [(SelfLoopPair, Soft)]);
        let unclosed = kinds(include_str!("../fixtures/malformed/unclosed.txt"));
        assert!(unclosed.contains(&(MalformedSyntax, Hard)));
    }

    #[test]
    fn stray_dollar_is_soft() {
        let found = detect(&parse_all("[Researchers ($N7)] [working on $($L, $N1, $N7)] [HCI ($N1)]"));
        assert_eq!(found.len(), 1);
        assert_eq!((found[0].kind, found[0].severity), (DiagnosticKind::MalformedSyntax, Severity::Soft));
    }

    #[test]
    fn spans_are_paragraph_relative() {
        let text = "[A ($N1)] [r ($H, $N1, $N2)] [B ($N2)].\n\nThen [C ($N3)].";
        let found = detect(&parse_all(text));
        assert_eq!(found[0].paragraph, 1);
        assert_eq!(found[0].span, Span::new(5, 6));
    }
}
