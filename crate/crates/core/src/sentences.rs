//! Sentence segmentation over stripped text, mapped back to annotated text.
//!
//! A sentence ends at `.`, `!` or `?` (plus any closing quotes or brackets)
//! when whitespace and an uppercase letter follow, unless the word before
//! the period is a known abbreviation or a single initial.

use serde::{Deserialize, Serialize};

use crate::annotation::{ParseEvent, Span};

const ABBREVIATIONS: &[&str] = &[
    "e.g.", "i.e.", "etc.", "vs.", "cf.", "al.", "mr.", "mrs.", "ms.", "dr.", "prof.", "st.",
    "jr.", "sr.", "inc.", "ltd.", "co.", "corp.", "no.", "fig.", "approx.", "u.s.", "u.k.",
];

const CLOSERS: &[char] = &['"', '\'', ')', ']', '\u{201d}', '\u{2019}'];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    /// Range in the stripped text, without surrounding whitespace.
    pub clean: Span,
    /// Matching range in the annotated text.
    pub raw: Span,
}

/// Splits stripped text into trimmed sentence spans.
pub fn split_clean(text: &str) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut start = 0;
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if matches!(c, '.' | '!' | '?') {
            let mut j = i + 1;
            while j < chars.len() && CLOSERS.contains(&chars[j].1) {
                j += 1;
            }
            let end = chars.get(j).map_or(text.len(), |(p, _)| *p);
            let mut k = j;
            while k < chars.len() && chars[k].1.is_whitespace() {
                k += 1;
            }
            let boundary = k > j
                && k < chars.len()
                && chars[k].1.is_uppercase()
                && !(c == '.' && is_abbreviation(&text[..pos + 1]));
            if boundary {
                push_trimmed(text, start, end, &mut spans);
                start = chars[k].0;
                i = k;
                continue;
            }
        }
        i += 1;
    }
    push_trimmed(text, start, text.len(), &mut spans);
    spans
}

fn push_trimmed(text: &str, start: usize, end: usize, out: &mut Vec<Span>) {
    let slice = &text[start..end];
    let lead = slice.len() - slice.trim_start().len();
    let trimmed = slice.trim();
    if !trimmed.is_empty() {
        out.push(Span::new(start + lead, start + lead + trimmed.len()));
    }
}

/// Whether the word ending at the end of `prefix` (which ends in `.`) is an
/// abbreviation or an initial.
fn is_abbreviation(prefix: &str) -> bool {
    let word = prefix
        .rsplit(|c: char| c.is_whitespace() || c == '(' || c == '"')
        .next()
        .unwrap_or("");
    let lower = word.to_lowercase();
    if ABBREVIATIONS.contains(&lower.as_str()) {
        return true;
    }
    let mut letters = word.trim_end_matches('.').chars();
    matches!((letters.next(), letters.next()), (Some(c), None) if c.is_uppercase())
}

/// Segments one paragraph's events into sentences.
///
/// Boundaries that would cut through an annotation label are dropped, so a
/// sentence always contains whole annotations.
pub fn segment(events: &[ParseEvent]) -> Vec<Sentence> {
    let clean: String = events.iter().map(ParseEvent::clean_text).collect();
    let base = events.first().map_or(0, |e| e.clean_span().start);
    let mentions: Vec<Span> = events
        .iter()
        .filter(|e| e.is_mention())
        .map(|e| e.clean_span().offset_by(-(base as isize)))
        .collect();
    let inside_mention = |offset: usize| mentions.iter().any(|m| m.start < offset && offset < m.end);

    let mut merged: Vec<Span> = Vec::new();
    for span in split_clean(&clean) {
        match merged.last_mut() {
            Some(prev) if inside_mention(prev.end) || inside_mention(span.start) => {
                prev.end = span.end;
            }
            _ => merged.push(span),
        }
    }

    merged
        .into_iter()
        .map(|s| {
            let clean = s.offset_by(base as isize);
            Sentence {
                clean,
                raw: Span::new(clean_to_raw(events, clean.start), clean_to_raw(events, clean.end)),
            }
        })
        .collect()
}

/// Maps a stripped-text offset to the annotated-text offset.
pub fn clean_to_raw(events: &[ParseEvent], offset: usize) -> usize {
    for e in events {
        let c = e.clean_span();
        let r = e.raw_span();
        if offset == c.start {
            return r.start;
        }
        if offset < c.end {
            return match e {
                ParseEvent::Text { .. } | ParseEvent::ParagraphBreak { .. } => r.start + (offset - c.start),
                _ => r.start,
            };
        }
    }
    events.last().map_or(offset, |e| e.raw_span().end)
}

/// Index of the sentence containing the stripped-text span.
pub fn sentence_of(sentences: &[Sentence], span: Span) -> Option<usize> {
    sentences
        .iter()
        .position(|s| s.clean.start <= span.start && span.start < s.clean.end.max(s.clean.start + 1))
        .or_else(|| sentences.iter().rposition(|s| s.clean.start <= span.start))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::parse_all;

    fn texts(text: &str) -> Vec<&str> {
        split_clean(text).iter().map(|s| s.slice(text)).collect()
    }

    #[test]
    fn splits_on_terminal_punctuation() {
        assert_eq!(
            texts("Birds fly. They sing! Do fish swim? Yes."),
            ["Birds fly.", "They sing!", "Do fish swim?", "Yes."]
        );
    }

    #[test]
    fn requires_uppercase_after_space() {
        assert_eq!(texts("Version 2.5 is out. it works."), ["Version 2.5 is out. it works."]);
    }

    #[test]
    fn abbreviations_and_initials() {
        assert_eq!(
            texts("Fruits, e.g. Apples, are good. J. Smith agreed. Dr. Who left."),
            ["Fruits, e.g. Apples, are good.", "J. Smith agreed.", "Dr. Who left."]
        );
    }

    #[test]
    fn closing_quotes_stay_with_sentence() {
        assert_eq!(texts("He said \"stop.\" Then left."), ["He said \"stop.\"", "Then left."]);
    }

    #[test]
    fn paragraph_c_has_three_sentences() {
        let text = include_str!("../fixtures/paper/paragraph_c.txt");
        let events = parse_all(text);
        let sentences = segment(&events);
        assert_eq!(sentences.len(), 3);
        assert!(sentences[1].raw.slice(text).starts_with("[One key ($H, $N3, $N4)]"));
        assert!(sentences[2].raw.slice(text).ends_with("[flight ($N2)]."));
        let clean: String = events.iter().map(ParseEvent::clean_text).collect();
        assert_eq!(
            sentences[0].clean.slice(&clean),
            "Birds can fly due to a combination of physiological adaptations."
        );
    }

    #[test]
    fn boundary_inside_label_is_ignored() {
        let text = "[Washington D.C. Metro ($N1)] [serves ($H, $N1, $N2)] [the region ($N2)].";
        let sentences = segment(&parse_all(text));
        assert_eq!(sentences.len(), 1);
        assert_eq!(sentences[0].raw, Span::new(0, text.len()));
    }

    #[test]
    fn sentence_lookup() {
        let text = "[Ants ($N1)] [are ($H, $N1, $N2)] [insects ($N2)]. [Bees ($N3)] [chase ($H, $N3, $N1)] [ants ($N1)].";
        let events = parse_all(text);
        let sentences = segment(&events);
        let spans: Vec<Span> = events.iter().filter(|e| e.is_mention()).map(|e| e.clean_span()).collect();
        assert_eq!(sentence_of(&sentences, spans[0]), Some(0));
        assert_eq!(sentence_of(&sentences, spans[3]), Some(1));
    }
}
