use super::{EntityId, Irregularity, MalformedReason, ParseEvent, RelationPair, Saliency, Span};

/// Longest span an unresolved `[` may hold before it is released as text.
pub const LOOKAHEAD_LIMIT: usize = 1024;

#[derive(Debug, Clone)]
enum State {
    Text,
    /// A run of `\n`/`\r` whose length is not known yet.
    Newlines { run: String, start: usize, newlines: usize },
    /// Text after an unresolved `[`.
    Open {
        raw: String,
        start: usize,
        /// Offset inside `raw` where the trailing newline run starts.
        run_start: Option<usize>,
        newlines: usize,
    },
}

/// Incremental parser for annotated text.
///
/// Text is processed one character at a time and every decision depends
/// only on the characters seen, so chunk boundaries never change the
/// output. Plain text is released once something terminates it (an
/// annotation, a paragraph break or [`StreamParser::finish`]).
#[derive(Debug, Clone)]
pub struct StreamParser {
    state: State,
    pending: String,
    pending_start: usize,
    consumed: usize,
    clean_offset: usize,
    paragraph: usize,
}

impl Default for StreamParser {
    fn default() -> Self {
        Self::new()
    }
}

impl StreamParser {
    pub fn new() -> Self {
        Self {
            state: State::Text,
            pending: String::new(),
            pending_start: 0,
            consumed: 0,
            clean_offset: 0,
            paragraph: 0,
        }
    }

    /// Raw bytes consumed so far.
    pub fn raw_offset(&self) -> usize {
        self.consumed
    }

    /// Stripped bytes emitted so far.
    pub fn clean_offset(&self) -> usize {
        self.clean_offset
    }

    pub fn paragraph_index(&self) -> usize {
        self.paragraph
    }

    /// Bytes consumed but not yet attributed to an emitted event.
    pub fn held_bytes(&self) -> usize {
        let start = if !self.pending.is_empty() {
            self.pending_start
        } else {
            match &self.state {
                State::Text => self.consumed,
                State::Newlines { start, .. } | State::Open { start, .. } => *start,
            }
        };
        self.consumed - start
    }

    pub fn feed(&mut self, chunk: &str) -> Vec<ParseEvent> {
        let mut out = Vec::new();
        for c in chunk.chars() {
            let pos = self.consumed;
            self.consumed += c.len_utf8();
            self.process(c, pos, &mut out);
        }
        out
    }

    /// Flushes everything still held. Unclosed annotations degrade to text
    /// followed by a `Malformed` marker.
    pub fn finish(&mut self) -> Vec<ParseEvent> {
        let mut out = Vec::new();
        match std::mem::replace(&mut self.state, State::Text) {
            State::Text => {}
            State::Newlines { run, start, newlines } => {
                self.end_newlines(run, start, newlines, &mut out)
            }
            State::Open { raw, start, .. } => {
                self.abandon(raw, start, MalformedReason::Unclosed, &mut out)
            }
        }
        self.flush(&mut out);
        out
    }

    fn process(&mut self, c: char, pos: usize, out: &mut Vec<ParseEvent>) {
        match &mut self.state {
            State::Text => match c {
                '[' => {
                    self.state = State::Open {
                        raw: String::from('['),
                        start: pos,
                        run_start: None,
                        newlines: 0,
                    }
                }
                '\n' | '\r' => {
                    self.state = State::Newlines {
                        run: String::from(c),
                        start: pos,
                        newlines: usize::from(c == '\n'),
                    }
                }
                _ => self.push_text(c, pos),
            },
            State::Newlines { run, newlines, .. } => {
                if c == '\n' || c == '\r' {
                    run.push(c);
                    *newlines += usize::from(c == '\n');
                } else {
                    let State::Newlines { run, start, newlines } =
                        std::mem::replace(&mut self.state, State::Text)
                    else {
                        unreachable!()
                    };
                    self.end_newlines(run, start, newlines, out);
                    self.process(c, pos, out);
                }
            }
            State::Open { raw, run_start, newlines, .. } => {
                let fits = raw.len() + c.len_utf8() <= LOOKAHEAD_LIMIT;
                match c {
                    '[' => {
                        let (raw, start) = self.take_open();
                        self.abandon(raw, start, MalformedReason::NestedBracket, out);
                        self.process(c, pos, out);
                    }
                    _ if !fits => {
                        let (raw, start) = self.take_open();
                        self.abandon(raw, start, MalformedReason::TooLong, out);
                        self.process(c, pos, out);
                    }
                    ']' => {
                        raw.push(']');
                        let (raw, start) = self.take_open();
                        self.resolve(raw, start, out);
                    }
                    '\n' | '\r' => {
                        if run_start.is_none() {
                            *run_start = Some(raw.len());
                        }
                        raw.push(c);
                        if c == '\n' {
                            *newlines += 1;
                        }
                        if *newlines >= 2 {
                            let split = run_start.expect("run start recorded");
                            let count = *newlines;
                            let (mut raw, start) = self.take_open();
                            let run = raw.split_off(split);
                            self.abandon(raw, start, MalformedReason::Unclosed, out);
                            self.state = State::Newlines {
                                run,
                                start: start + split,
                                newlines: count,
                            };
                        }
                    }
                    _ => {
                        raw.push(c);
                        *run_start = None;
                        *newlines = 0;
                    }
                }
            }
        }
    }

    fn take_open(&mut self) -> (String, usize) {
        match std::mem::replace(&mut self.state, State::Text) {
            State::Open { raw, start, .. } => (raw, start),
            _ => unreachable!("take_open outside an open annotation"),
        }
    }

    fn push_text(&mut self, c: char, pos: usize) {
        if self.pending.is_empty() {
            self.pending_start = pos;
        }
        self.pending.push(c);
    }

    fn extend_text(&mut self, s: &str, pos: usize) {
        if s.is_empty() {
            return;
        }
        if self.pending.is_empty() {
            self.pending_start = pos;
        }
        self.pending.push_str(s);
    }

    fn flush(&mut self, out: &mut Vec<ParseEvent>) {
        if self.pending.is_empty() {
            return;
        }
        let text = std::mem::take(&mut self.pending);
        let len = text.len();
        out.push(ParseEvent::Text {
            text,
            raw_span: Span::new(self.pending_start, self.pending_start + len),
            clean_span: Span::new(self.clean_offset, self.clean_offset + len),
        });
        self.clean_offset += len;
    }

    fn end_newlines(&mut self, run: String, start: usize, newlines: usize, out: &mut Vec<ParseEvent>) {
        if newlines < 2 {
            self.extend_text(&run, start);
            return;
        }
        self.flush(out);
        let len = run.len();
        self.paragraph += 1;
        out.push(ParseEvent::ParagraphBreak {
            index: self.paragraph,
            text: run,
            raw_span: Span::new(start, start + len),
            clean_span: Span::new(self.clean_offset, self.clean_offset + len),
        });
        self.clean_offset += len;
    }

    /// Releases an unresolved bracket as text plus a marker.
    fn abandon(&mut self, raw: String, start: usize, reason: MalformedReason, out: &mut Vec<ParseEvent>) {
        let end = start + raw.len();
        self.extend_text(&raw, start);
        self.flush(out);
        out.push(ParseEvent::Malformed {
            text: raw,
            reason,
            raw_span: Span::at(end),
            clean_span: Span::at(self.clean_offset),
        });
    }

    fn resolve(&mut self, raw: String, start: usize, out: &mut Vec<ParseEvent>) {
        let inner = &raw[1..raw.len() - 1];
        match interpret(inner) {
            Interpretation::Text => self.extend_text(&raw, start),
            Interpretation::Broken(reason) => self.abandon(raw, start, reason, out),
            Interpretation::Mention { label, payload, irregularities } => {
                self.flush(out);
                let raw_span = Span::new(start, start + raw.len());
                let clean_span = Span::new(self.clean_offset, self.clean_offset + label.len());
                self.clean_offset += label.len();
                out.push(match payload {
                    Payload::Entity(id) => ParseEvent::Entity {
                        id,
                        label,
                        raw_span,
                        clean_span,
                        irregularities,
                    },
                    Payload::Pairs(pairs) => ParseEvent::Relation {
                        label,
                        pairs,
                        raw_span,
                        clean_span,
                        irregularities,
                    },
                });
            }
        }
    }
}

enum Payload {
    Entity(EntityId),
    Pairs(Vec<RelationPair>),
}

enum Interpretation {
    /// Ordinary bracketed prose such as `[sic]`.
    Text,
    Broken(MalformedReason),
    Mention {
        label: String,
        payload: Payload,
        irregularities: Vec<Irregularity>,
    },
}

fn interpret(inner: &str) -> Interpretation {
    let not_annotation = || {
        if inner.contains('$') {
            Interpretation::Broken(MalformedReason::BadPayload)
        } else {
            Interpretation::Text
        }
    };

    let trimmed = inner.trim_end();
    let Some(open) = final_group_start(trimmed) else {
        return not_annotation();
    };
    let mut lowercase = false;
    let Some(payload) = parse_payload(&trimmed[open + 1..trimmed.len() - 1], &mut lowercase) else {
        return not_annotation();
    };

    let mut irregularities = Vec::new();
    let head = trimmed[..open].trim_end();
    let label = head.trim_end_matches('$');
    if label.len() != head.len() {
        irregularities.push(Irregularity::StrayDollar);
    }
    let label = label.trim();
    if label.is_empty() {
        return Interpretation::Broken(MalformedReason::EmptyLabel);
    }
    if lowercase {
        irregularities.push(Irregularity::LowercaseMarker);
    }
    Interpretation::Mention {
        label: label.to_string(),
        payload,
        irregularities,
    }
}

/// Byte offset of the `(` matching a trailing `)`.
fn final_group_start(s: &str) -> Option<usize> {
    if !s.ends_with(')') {
        return None;
    }
    let mut depth = 0usize;
    for (i, c) in s.char_indices().rev() {
        match c {
            ')' => depth += 1,
            '(' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

fn parse_payload(payload: &str, lowercase: &mut bool) -> Option<Payload> {
    let parts: Vec<&str> = payload.split(';').collect();
    if parts.len() == 1 && !parts[0].contains(',') {
        return match parse_marker(parts[0], lowercase)? {
            Marker::Entity(id) => Some(Payload::Entity(id)),
            Marker::Saliency(_) => None,
        };
    }
    let mut pairs = Vec::with_capacity(parts.len());
    for part in parts {
        let fields: Vec<&str> = part.split(',').collect();
        let [s, a, b] = fields.as_slice() else {
            return None;
        };
        let (Marker::Saliency(saliency), Marker::Entity(source), Marker::Entity(target)) = (
            parse_marker(s, lowercase)?,
            parse_marker(a, lowercase)?,
            parse_marker(b, lowercase)?,
        ) else {
            return None;
        };
        pairs.push(RelationPair { saliency, source, target });
    }
    Some(Payload::Pairs(pairs))
}

enum Marker {
    Entity(EntityId),
    Saliency(Saliency),
}

fn parse_marker(token: &str, lowercase: &mut bool) -> Option<Marker> {
    let rest = token.trim().strip_prefix('$')?;
    let mut chars = rest.chars();
    let kind = chars.next()?;
    let tail = chars.as_str();
    let marker = match kind.to_ascii_uppercase() {
        'N' => {
            if tail.is_empty() || !tail.bytes().all(|b| b.is_ascii_digit()) {
                return None;
            }
            Marker::Entity(EntityId::new(tail.parse().ok()?)?)
        }
        'H' if tail.is_empty() => Marker::Saliency(Saliency::High),
        'L' if tail.is_empty() => Marker::Saliency(Saliency::Low),
        _ => return None,
    };
    if kind.is_ascii_lowercase() {
        *lowercase = true;
    }
    Some(marker)
}
