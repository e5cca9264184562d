use std::fmt::Write;

use super::{parse_all, Annotation, Mark, Span};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SerializeError {
    #[error("span {start}..{end} is outside the text (len {len})", start = .0.start, end = .0.end, len = .1)]
    OutOfRange(Span, usize),
    #[error("span {start}..{end} does not fall on character boundaries", start = .0.start, end = .0.end)]
    NotCharBoundary(Span),
    #[error("spans {a:?} and {b:?} overlap")]
    Overlap { a: Span, b: Span },
    #[error("annotation label at {start}..{end} is empty", start = .0.start, end = .0.end)]
    EmptyLabel(Span),
    #[error("annotation label {0:?} contains a square bracket")]
    BracketInLabel(String),
    #[error("relationship annotation at {start}..{end} has no pairs", start = .0.start, end = .0.end)]
    NoPairs(Span),
}

/// Renders one annotation in canonical form.
pub fn render_annotation(label: &str, mark: &Mark) -> String {
    let mut out = String::with_capacity(label.len() + 24);
    out.push('[');
    out.push_str(label);
    out.push_str(" (");
    match mark {
        Mark::Entity(id) => {
            let _ = write!(out, "{id}");
        }
        Mark::Relation(pairs) => {
            for (i, pair) in pairs.iter().enumerate() {
                if i > 0 {
                    out.push_str("; ");
                }
                let _ = write!(out, "{pair}");
            }
        }
    }
    out.push_str(")]");
    out
}

/// Inserts annotations into stripped text.
///
/// Output is canonical: `[label ($Nk)]` for entities and pairs joined by
/// `"; "` with a single space after each comma for relationships.
pub fn serialize(clean: &str, annotations: &[Annotation]) -> Result<String, SerializeError> {
    let mut ordered: Vec<&Annotation> = annotations.iter().collect();
    ordered.sort_by_key(|a| (a.span.start, a.span.end));

    let mut out = String::with_capacity(clean.len() + annotations.len() * 16);
    let mut cursor = 0;
    let mut previous: Option<Span> = None;
    for a in ordered {
        let span = a.span;
        if span.start > span.end || span.end > clean.len() {
            return Err(SerializeError::OutOfRange(span, clean.len()));
        }
        if !clean.is_char_boundary(span.start) || !clean.is_char_boundary(span.end) {
            return Err(SerializeError::NotCharBoundary(span));
        }
        if span.is_empty() {
            return Err(SerializeError::EmptyLabel(span));
        }
        if let Some(prev) = previous {
            if prev.end > span.start {
                return Err(SerializeError::Overlap { a: prev, b: span });
            }
        }
        if let Mark::Relation(pairs) = &a.mark {
            if pairs.is_empty() {
                return Err(SerializeError::NoPairs(span));
            }
        }
        let label = span.slice(clean);
        if label.contains(['[', ']']) {
            return Err(SerializeError::BracketInLabel(label.to_string()));
        }
        out.push_str(&clean[cursor..span.start]);
        out.push_str(&render_annotation(label, &a.mark));
        cursor = span.end;
        previous = Some(span);
    }
    out.push_str(&clean[cursor..]);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RewriteError {
    #[error("no annotation covers stripped span {start}..{end}", start = .0.start, end = .0.end)]
    NoMention(Span),
}

/// Replaces whole annotations, addressed by the stripped-text span of their
/// label, with new annotated text.
pub fn replace_mentions(text: &str, rewrites: &[(Span, String)]) -> Result<String, RewriteError> {
    let events = parse_all(text);
    let mut edits: Vec<(Span, &str)> = Vec::with_capacity(rewrites.len());
    for (clean, replacement) in rewrites {
        let event = events
            .iter()
            .find(|e| e.is_mention() && e.clean_span() == *clean)
            .ok_or(RewriteError::NoMention(*clean))?;
        edits.push((event.raw_span(), replacement.as_str()));
    }
    edits.sort_by_key(|(span, _)| std::cmp::Reverse(span.start));
    edits.dedup_by_key(|(span, _)| span.start);
    let mut out = text.to_string();
    for (span, replacement) in edits {
        out.replace_range(span.start..span.end, replacement);
    }
    Ok(out)
}
