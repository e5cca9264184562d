//! Inline annotation grammar.
//!
//! Responses mark entities as `[label ($N1)]` and relationships as
//! `[label ($H, $N1, $N2; $L, $N1, $N3)]`. The grammar:
//!
//! ```text
//! annotation := "[" label "(" payload ")" "]"
//! payload    := entity-id | pair (";" pair)*
//! pair       := saliency "," entity-id "," entity-id
//! entity-id  := "$N" digits        saliency := "$H" | "$L"
//! ```
//!
//! The payload is always the last balanced parenthesized group before the
//! closing bracket, so labels may carry their own parentheses
//! (`[people (users) ($N5)]`). Markers are case-insensitive. A run of two or
//! more newlines separates paragraphs.
//!
//! [`StreamParser`] consumes text in arbitrary chunks and produces exactly
//! the events [`parse_all`] produces for the concatenated text.

mod serialize;
mod stream;

use std::fmt;
use std::num::NonZeroU32;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use serialize::{render_annotation, replace_mentions, serialize, RewriteError, SerializeError};
pub use stream::{StreamParser, LOOKAHEAD_LIMIT};

/// Response-global entity identifier, the `k` in `$Nk`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(NonZeroU32);

impl EntityId {
    pub fn new(value: u32) -> Option<Self> {
        NonZeroU32::new(value).map(Self)
    }

    pub fn get(self) -> u32 {
        self.0.get()
    }

    /// The identifier after this one.
    pub fn next(self) -> Self {
        Self(self.0.saturating_add(1))
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "$N{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid entity id {0:?}")]
pub struct InvalidEntityId(pub String);

impl FromStr for EntityId {
    type Err = InvalidEntityId;

    /// Accepts `$N12`, `$n12`, `N12` or a bare `12`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let t = t.strip_prefix('$').unwrap_or(t);
        let t = t.strip_prefix(['N', 'n']).unwrap_or(t);
        t.parse::<u32>()
            .ok()
            .and_then(EntityId::new)
            .ok_or_else(|| InvalidEntityId(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Saliency {
    High,
    Low,
}

impl fmt::Display for Saliency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Saliency::High => f.write_str("$H"),
            Saliency::Low => f.write_str("$L"),
        }
    }
}

/// One `saliency, source, target` triple of a relationship annotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationPair {
    pub saliency: Saliency,
    pub source: EntityId,
    pub target: EntityId,
}

impl RelationPair {
    pub fn new(saliency: Saliency, source: EntityId, target: EntityId) -> Self {
        Self { saliency, source, target }
    }

    pub fn is_self_loop(&self) -> bool {
        self.source == self.target
    }

    pub fn touches(&self, id: EntityId) -> bool {
        self.source == id || self.target == id
    }
}

impl fmt::Display for RelationPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}, {}, {}", self.saliency, self.source, self.target)
    }
}

/// Half-open byte range.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Self { start, end }
    }

    pub fn at(offset: usize) -> Self {
        Self::new(offset, offset)
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    /// Non-empty intersection.
    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn overlap_len(&self, other: &Span) -> usize {
        self.end.min(other.end).saturating_sub(self.start.max(other.start))
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn offset_by(&self, delta: isize) -> Span {
        Span::new(
            (self.start as isize + delta) as usize,
            (self.end as isize + delta) as usize,
        )
    }

    pub fn slice<'a>(&self, text: &'a str) -> &'a str {
        &text[self.start..self.end]
    }
}

/// Notational slips that still parse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Irregularity {
    /// `$n1` / `$h` instead of `$N1` / `$H`.
    LowercaseMarker,
    /// A `$` dangling before the payload, as in `[working on $($L, $N1, $N7)]`.
    StrayDollar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MalformedReason {
    /// `[` never closed before end of stream or a paragraph break.
    Unclosed,
    /// `[` opened inside another annotation.
    NestedBracket,
    /// Open bracket held longer than [`LOOKAHEAD_LIMIT`] bytes.
    TooLong,
    /// Bracketed text with `$` markers that do not form a payload.
    BadPayload,
    /// Valid payload with nothing in front of it.
    EmptyLabel,
}

impl fmt::Display for MalformedReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MalformedReason::Unclosed => "unclosed annotation",
            MalformedReason::NestedBracket => "nested square bracket",
            MalformedReason::TooLong => "annotation exceeds lookahead limit",
            MalformedReason::BadPayload => "unrecognized annotation payload",
            MalformedReason::EmptyLabel => "annotation without label",
        })
    }
}

/// Atomic grammar output.
///
/// `raw_span` indexes the annotated input, `clean_span` the stripped text.
/// Every input byte belongs to exactly one event's `raw_span`; `Malformed`
/// markers are zero-width and sit right after the text they describe.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ParseEvent {
    Text {
        text: String,
        raw_span: Span,
        clean_span: Span,
    },
    Entity {
        id: EntityId,
        label: String,
        raw_span: Span,
        clean_span: Span,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        irregularities: Vec<Irregularity>,
    },
    Relation {
        label: String,
        pairs: Vec<RelationPair>,
        raw_span: Span,
        clean_span: Span,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        irregularities: Vec<Irregularity>,
    },
    /// `index` is the paragraph that starts after the break.
    ParagraphBreak {
        index: usize,
        text: String,
        raw_span: Span,
        clean_span: Span,
    },
    Malformed {
        text: String,
        reason: MalformedReason,
        raw_span: Span,
        clean_span: Span,
    },
}

impl ParseEvent {
    pub fn raw_span(&self) -> Span {
        match self {
            ParseEvent::Text { raw_span, .. }
            | ParseEvent::Entity { raw_span, .. }
            | ParseEvent::Relation { raw_span, .. }
            | ParseEvent::ParagraphBreak { raw_span, .. }
            | ParseEvent::Malformed { raw_span, .. } => *raw_span,
        }
    }

    pub fn clean_span(&self) -> Span {
        match self {
            ParseEvent::Text { clean_span, .. }
            | ParseEvent::Entity { clean_span, .. }
            | ParseEvent::Relation { clean_span, .. }
            | ParseEvent::ParagraphBreak { clean_span, .. }
            | ParseEvent::Malformed { clean_span, .. } => *clean_span,
        }
    }

    /// The text this event contributes to the stripped output.
    pub fn clean_text(&self) -> &str {
        match self {
            ParseEvent::Text { text, .. } | ParseEvent::ParagraphBreak { text, .. } => text,
            ParseEvent::Entity { label, .. } | ParseEvent::Relation { label, .. } => label,
            ParseEvent::Malformed { .. } => "",
        }
    }

    pub fn is_mention(&self) -> bool {
        matches!(self, ParseEvent::Entity { .. } | ParseEvent::Relation { .. })
    }

    pub fn irregularities(&self) -> &[Irregularity] {
        match self {
            ParseEvent::Entity { irregularities, .. } | ParseEvent::Relation { irregularities, .. } => {
                irregularities
            }
            _ => &[],
        }
    }

    /// The annotation carried by a mention event, if any.
    pub fn annotation(&self) -> Option<Annotation> {
        match self {
            ParseEvent::Entity { id, clean_span, .. } => Some(Annotation {
                span: *clean_span,
                mark: Mark::Entity(*id),
            }),
            ParseEvent::Relation { pairs, clean_span, .. } => Some(Annotation {
                span: *clean_span,
                mark: Mark::Relation(pairs.clone()),
            }),
            _ => None,
        }
    }

    /// Moves both spans by the given byte deltas.
    pub fn shifted(mut self, raw_delta: isize, clean_delta: isize) -> Self {
        match &mut self {
            ParseEvent::Text { raw_span, clean_span, .. }
            | ParseEvent::Entity { raw_span, clean_span, .. }
            | ParseEvent::Relation { raw_span, clean_span, .. }
            | ParseEvent::ParagraphBreak { raw_span, clean_span, .. }
            | ParseEvent::Malformed { raw_span, clean_span, .. } => {
                *raw_span = raw_span.offset_by(raw_delta);
                *clean_span = clean_span.offset_by(clean_delta);
            }
        }
        self
    }
}

/// What an annotation asserts about its label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum Mark {
    Entity(EntityId),
    Relation(Vec<RelationPair>),
}

/// An annotation positioned over stripped text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Annotation {
    pub span: Span,
    pub mark: Mark,
}

/// Parses a complete text.
pub fn parse_all(text: &str) -> Vec<ParseEvent> {
    let mut parser = StreamParser::new();
    let mut events = parser.feed(text);
    events.extend(parser.finish());
    events
}

/// Removes annotation markup, keeping each label in place.
///
/// Returns the stripped text and every mention's annotation, in order.
pub fn strip_annotations(text: &str) -> (String, Vec<Annotation>) {
    let events = parse_all(text);
    let mut clean = String::with_capacity(text.len());
    let mut annotations = Vec::new();
    for event in &events {
        clean.push_str(event.clean_text());
        if let Some(a) = event.annotation() {
            annotations.push(a);
        }
    }
    (clean, annotations)
}

/// Re-renders `text` with every annotation in canonical form.
pub fn canonicalize(text: &str) -> String {
    let (clean, annotations) = strip_annotations(text);
    serialize(&clean, &annotations).expect("parser output is always serializable")
}

/// Splits a response's events at paragraph breaks.
///
/// Break events themselves are dropped and each paragraph's spans are
/// rebased so its stripped and annotated text both start at 0. A trailing
/// break yields a final empty paragraph.
pub fn split_paragraphs(events: &[ParseEvent]) -> Vec<Vec<ParseEvent>> {
    let mut out = vec![Vec::new()];
    let (mut raw_base, mut clean_base) = (0isize, 0isize);
    for e in events {
        if let ParseEvent::ParagraphBreak { raw_span, clean_span, .. } = e {
            raw_base = raw_span.end as isize;
            clean_base = clean_span.end as isize;
            out.push(Vec::new());
            continue;
        }
        out.last_mut()
            .expect("at least one paragraph")
            .push(e.clone().shifted(-raw_base, -clean_base));
    }
    out
}

/// Largest entity id referenced anywhere in the events.
pub fn max_entity_id(events: &[ParseEvent]) -> Option<EntityId> {
    events
        .iter()
        .flat_map(|e| match e {
            ParseEvent::Entity { id, .. } => vec![*id],
            ParseEvent::Relation { pairs, .. } => {
                pairs.iter().flat_map(|p| [p.source, p.target]).collect()
            }
            _ => Vec::new(),
        })
        .max()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entity_id_display_and_parse() {
        let id = EntityId::new(12).unwrap();
        assert_eq!(id.to_string(), "$N12");
        assert_eq!("$n12".parse::<EntityId>().unwrap(), id);
        assert_eq!("12".parse::<EntityId>().unwrap(), id);
        assert!("$N0".parse::<EntityId>().is_err());
        assert!(EntityId::new(0).is_none());
    }

    #[test]
    fn pair_display() {
        let p = RelationPair::new(
            Saliency::Low,
            EntityId::new(4).unwrap(),
            EntityId::new(5).unwrap(),
        );
        assert_eq!(p.to_string(), "$L, $N4, $N5");
    }

    #[test]
    fn event_json_shape() {
        let events = parse_all("[Birds ($N1)]");
        let json = serde_json::to_value(&events[0]).unwrap();
        assert_eq!(json["type"], "entity");
        assert_eq!(json["id"], 1);
        assert_eq!(json["label"], "Birds");
        assert_eq!(json["raw_span"]["end"], 13);
        let back: ParseEvent = serde_json::from_value(json).unwrap();
        assert_eq!(back, events[0]);
    }
}
