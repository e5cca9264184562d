//! Session state and every mutation of it.
//!
//! The state never talks to the network. Operations return [`Effect`]s
//! asking the owner to start streams; stream chunks and task results come
//! back through [`SessionState::on_chunk`] and [`SessionState::on_task`].

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use graphologue_core::annotation::{
    parse_all, render_annotation, replace_mentions, EntityId, Mark, ParseEvent, RelationPair, Span, StreamParser,
};
use graphologue_core::diagnostics::{
    dead_end_labels, detect_paragraph, orphan_ids, Diagnostic, DiagnosticKind, Scope, Severity,
};
use graphologue_core::graph::{
    ExportFormat, GraphDiff, GraphError, GraphView, SaliencyFilter, SessionGraph, TextRewrite, ViewScope,
};
use graphologue_core::prompts::{self, ChatMessage, PromptKind};
use graphologue_core::sentences::{segment, sentence_of, Sentence};
use graphologue_transport::{TokenChunk, TransportError};
use serde::{Deserialize, Serialize};

use crate::event::{ErrorCode, EventLog, Payload};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParagraphStatus {
    Streaming,
    Complete,
    Correcting,
    Corrected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub text: String,
    pub events: Vec<ParseEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParagraphRecord {
    pub index: usize,
    pub raw: String,
    pub clean: String,
    pub sentences: Vec<Sentence>,
    pub status: ParagraphStatus,
    pub summary: Option<Summary>,
    pub outline: Option<String>,
    pub diagnostics: Vec<Diagnostic>,
    /// Set once a correction round has been issued.
    pub correction_issued: bool,
    /// Messages of failed summary, outline or correction tasks.
    pub failures: Vec<String>,
    #[serde(skip)]
    generation: u64,
}

impl ParagraphRecord {
    fn new(index: usize) -> Self {
        Self {
            index,
            raw: String::new(),
            clean: String::new(),
            sentences: Vec::new(),
            status: ParagraphStatus::Streaming,
            summary: None,
            outline: None,
            diagnostics: Vec::new(),
            correction_issued: false,
            failures: Vec::new(),
            generation: 0,
        }
    }

    pub fn events(&self) -> Vec<ParseEvent> {
        parse_all(&self.raw)
    }

    fn refresh(&mut self) {
        let events = self.events();
        self.clean = events.iter().map(ParseEvent::clean_text).collect();
        self.sentences = segment(&events);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FollowupKind {
    Explain,
    Examples,
}

impl FollowupKind {
    fn prompt(self) -> PromptKind {
        match self {
            FollowupKind::Explain => PromptKind::NodeExplain,
            FollowupKind::Examples => PromptKind::NodeExamples,
        }
    }

    fn tag(self) -> &'static str {
        match self {
            FollowupKind::Explain => "explain",
            FollowupKind::Examples => "examples",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SessionError {
    #[error("{0}")]
    BadRequest(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("transport: {0}")]
    Transport(String),
}

impl From<GraphError> for SessionError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::NotFound(_) | GraphError::UnknownParagraph(_) => SessionError::NotFound(e.to_string()),
            GraphError::InvalidTarget(..) => SessionError::InvalidTarget(e.to_string()),
            GraphError::EmptySelection => SessionError::BadRequest(e.to_string()),
            GraphError::SameNode(_) => SessionError::Conflict(e.to_string()),
        }
    }
}

/// Work the owner must start on the state's behalf.
#[derive(Debug, Clone, PartialEq)]
pub enum Effect {
    /// A stream whose chunks go to `on_chunk` as they arrive.
    StartText { stream: u64, tag: String, messages: Vec<ChatMessage> },
    /// A stream collected whole and handed to `on_task`.
    StartTask { task: u64, tag: String, messages: Vec<ChatMessage> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TaskKind {
    Correction { sentence: usize },
    Summary,
    Outline,
}

#[derive(Debug)]
struct PendingTask {
    kind: TaskKind,
    paragraph: usize,
    generation: u64,
    tag: String,
    request_id: Option<String>,
}

#[derive(Debug)]
struct CorrectionBatch {
    paragraph: usize,
    expected: BTreeSet<usize>,
    results: BTreeMap<usize, Result<String, String>>,
    request_id: Option<String>,
}

impl CorrectionBatch {
    fn ready(&self) -> bool {
        self.expected.iter().all(|s| self.results.contains_key(s))
    }
}

#[derive(Debug)]
enum Target {
    /// Fills paragraphs in order; a break closes the current one.
    Response { current: Option<usize> },
    /// Appends to one paragraph; breaks become spaces.
    Append { paragraph: usize },
}

#[derive(Debug)]
struct ActiveStream {
    id: u64,
    tag: String,
    request_id: Option<String>,
    parser: StreamParser,
    buffer: String,
    target: Target,
    remap: BTreeMap<EntityId, EntityId>,
    /// Ids already claimed by this stream, never remapped.
    claimed: BTreeSet<EntityId>,
}

/// Read-only copy of the session for queries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub id: String,
    pub question: Option<String>,
    pub paragraphs: Vec<ParagraphRecord>,
    pub max_entity_id: Option<EntityId>,
    pub active_stream: Option<String>,
    pub pending_tasks: usize,
    pub last_seq: u64,
}

#[derive(Debug)]
pub struct SessionState {
    id: String,
    question: Option<String>,
    paragraphs: Vec<ParagraphRecord>,
    graph: SessionGraph,
    max_id: Option<EntityId>,
    log: Arc<EventLog>,
    active: Option<ActiveStream>,
    tasks: BTreeMap<u64, PendingTask>,
    corrections: VecDeque<CorrectionBatch>,
    next_handle: u64,
    tag_uses: BTreeMap<String, usize>,
}

fn ids_of(event: &ParseEvent) -> Vec<EntityId> {
    match event {
        ParseEvent::Entity { id, .. } => vec![*id],
        ParseEvent::Relation { pairs, .. } => pairs.iter().flat_map(|p| [p.source, p.target]).collect(),
        _ => Vec::new(),
    }
}

/// Same event placed at `raw` in the annotated text and at `clean_start`
/// in the stripped text.
fn relocate(mut event: ParseEvent, raw: Span, clean_start: usize) -> ParseEvent {
    let clean = Span::new(clean_start, clean_start + event.clean_span().len());
    match &mut event {
        ParseEvent::Text { raw_span, clean_span, .. }
        | ParseEvent::Entity { raw_span, clean_span, .. }
        | ParseEvent::Relation { raw_span, clean_span, .. }
        | ParseEvent::ParagraphBreak { raw_span, clean_span, .. }
        | ParseEvent::Malformed { raw_span, clean_span, .. } => {
            *raw_span = raw;
            *clean_span = clean;
        }
    }
    event
}

impl SessionState {
    pub fn new(id: impl Into<String>, log: Arc<EventLog>) -> Self {
        Self {
            id: id.into(),
            question: None,
            paragraphs: Vec::new(),
            graph: SessionGraph::new(),
            max_id: None,
            log,
            active: None,
            tasks: BTreeMap::new(),
            corrections: VecDeque::new(),
            next_handle: 0,
            tag_uses: BTreeMap::new(),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn log(&self) -> &Arc<EventLog> {
        &self.log
    }

    pub fn graph(&self) -> &SessionGraph {
        &self.graph
    }

    pub fn paragraphs(&self) -> &[ParagraphRecord] {
        &self.paragraphs
    }

    pub fn max_entity_id(&self) -> Option<EntityId> {
        self.max_id
    }

    /// No stream running, no task outstanding and no correction waiting.
    pub fn is_settled(&self) -> bool {
        self.active.is_none() && self.tasks.is_empty() && self.corrections.is_empty()
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            id: self.id.clone(),
            question: self.question.clone(),
            paragraphs: self.paragraphs.clone(),
            max_entity_id: self.max_id,
            active_stream: self.active.as_ref().map(|a| a.tag.clone()),
            pending_tasks: self.tasks.len(),
            last_seq: self.log.last_seq(),
        }
    }

    pub fn view(&self, filter: SaliencyFilter, scope: &ViewScope) -> Result<GraphView, SessionError> {
        Ok(self.graph.visible_subgraph(filter, scope)?)
    }

    pub fn export(&self, format: ExportFormat) -> String {
        self.graph.export(format)
    }

    /// The response as it currently reads, paragraphs joined by blank lines.
    pub fn document(&self) -> String {
        self.paragraphs.iter().map(|p| p.raw.as_str()).collect::<Vec<_>>().join("\n\n")
    }

    /// Conversation given to follow-up prompts: the initial exchange with
    /// the current document as the assistant turn.
    fn history(&self) -> Vec<ChatMessage> {
        let mut h = prompts::build_initial(self.question.as_deref().unwrap_or_default()).unwrap_or_default();
        h.push(ChatMessage::assistant(self.document()));
        h
    }

    fn emit(&self, request_id: &Option<String>, payload: Payload) {
        self.log.push(request_id.clone(), payload);
    }

    fn emit_diffs(&self, request_id: &Option<String>, diffs: Vec<GraphDiff>, animate: bool) {
        for mut d in diffs {
            d.animate |= animate;
            self.emit(request_id, Payload::GraphDiff(d));
        }
    }

    fn handle(&mut self) -> u64 {
        self.next_handle += 1;
        self.next_handle
    }

    /// Tag for a stream, suffixed `#n` from its second use on.
    fn tag(&mut self, base: String) -> String {
        let n = self.tag_uses.entry(base.clone()).or_default();
        *n += 1;
        if *n == 1 {
            base
        } else {
            format!("{base}#{n}")
        }
    }

    fn note_ids(&mut self, event: &ParseEvent) {
        for id in ids_of(event) {
            self.max_id = self.max_id.max(Some(id));
        }
    }

    fn fresh_id(&mut self) -> EntityId {
        let id = prompts::next_entity_id(self.max_id);
        self.max_id = Some(id);
        id
    }

    fn require_idle(&self) -> Result<(), SessionError> {
        match &self.active {
            Some(a) => Err(SessionError::Conflict(format!("stream {} is still running", a.tag))),
            None => Ok(()),
        }
    }

    fn start_text(&mut self, tag: String, target: Target, request_id: Option<String>, messages: Vec<ChatMessage>) -> Effect {
        let id = self.handle();
        self.active = Some(ActiveStream {
            id,
            tag: tag.clone(),
            request_id,
            parser: StreamParser::new(),
            buffer: String::new(),
            target,
            remap: BTreeMap::new(),
            claimed: BTreeSet::new(),
        });
        Effect::StartText { stream: id, tag, messages }
    }

    fn set_status(&mut self, k: usize, status: ParagraphStatus, request_id: &Option<String>) {
        if self.paragraphs[k].status != status {
            self.paragraphs[k].status = status;
            self.emit(request_id, Payload::ParagraphStatus { paragraph: k, status });
        }
    }

    // ---- user operations ----

    pub fn ask(&mut self, question: &str, request_id: Option<String>) -> Result<Vec<Effect>, SessionError> {
        if self.question.is_some() {
            return Err(SessionError::Conflict("the session already has a question".into()));
        }
        let messages = prompts::build_initial(question).map_err(|e| SessionError::BadRequest(e.to_string()))?;
        self.question = Some(question.to_string());
        let tag = self.tag("initial".into());
        Ok(vec![self.start_text(tag, Target::Response { current: None }, request_id, messages)])
    }

    pub fn followup(
        &mut self,
        node: EntityId,
        kind: FollowupKind,
        request_id: Option<String>,
    ) -> Result<Vec<Effect>, SessionError> {
        self.require_idle()?;
        let n = self.graph.node(node).ok_or_else(|| SessionError::NotFound(format!("node {node}")))?;
        let Some(mention) = n.mentions.iter().min_by_key(|m| (m.paragraph, m.span.start)).cloned() else {
            return Err(SessionError::InvalidTarget(format!("node {node} is a placeholder")));
        };
        let p = &self.paragraphs[mention.paragraph];
        let sentences = segment(&p.events());
        let sentence = sentence_of(&sentences, mention.span)
            .map(|i| sentences[i].raw.slice(&p.raw).to_string())
            .ok_or_else(|| SessionError::InvalidTarget(format!("no sentence holds node {node}")))?;
        let next = prompts::next_entity_id(self.max_id);
        let messages = prompts::build_node_followup(kind.prompt(), &self.history(), &sentence, &mention.text, next)
            .map_err(|e| SessionError::InvalidTarget(e.to_string()))?;
        let tag = self.tag(format!("{}/n{}", kind.tag(), node.get()));
        Ok(self.start_append(mention.paragraph, tag, request_id, messages))
    }

    pub fn tell_me_more(&mut self, k: usize, request_id: Option<String>) -> Result<Vec<Effect>, SessionError> {
        self.require_idle()?;
        let p = self.paragraphs.get(k).ok_or_else(|| SessionError::NotFound(format!("paragraph {k}")))?;
        if p.status == ParagraphStatus::Streaming {
            return Err(SessionError::Conflict(format!("paragraph {k} is still streaming")));
        }
        let messages = prompts::build_expand(PromptKind::TellMeMore, &self.history(), Some(&p.raw))
            .map_err(|e| SessionError::InvalidTarget(e.to_string()))?;
        let tag = self.tag(format!("more/p{k}"));
        Ok(self.start_append(k, tag, request_id, messages))
    }

    pub fn add_paragraph(&mut self, request_id: Option<String>) -> Result<Vec<Effect>, SessionError> {
        self.require_idle()?;
        if self.question.is_none() {
            return Err(SessionError::Conflict("nothing has been asked yet".into()));
        }
        let messages = prompts::build_expand(PromptKind::AddParagraph, &self.history(), None)
            .map_err(|e| SessionError::InvalidTarget(e.to_string()))?;
        let tag = self.tag(format!("add-paragraph/p{}", self.paragraphs.len()));
        Ok(vec![self.start_text(tag, Target::Response { current: None }, request_id, messages)])
    }

    fn start_append(&mut self, k: usize, tag: String, request_id: Option<String>, messages: Vec<ChatMessage>) -> Vec<Effect> {
        if self.paragraphs[k].status == ParagraphStatus::Complete {
            self.paragraphs[k].summary = None;
            self.paragraphs[k].outline = None;
            self.set_status(k, ParagraphStatus::Streaming, &request_id);
        }
        let needs_space = self.paragraphs[k].raw.chars().last().is_some_and(|c| !c.is_whitespace());
        if needs_space {
            let p = &mut self.paragraphs[k];
            let event = ParseEvent::Text {
                text: " ".into(),
                raw_span: Span::new(p.raw.len(), p.raw.len() + 1),
                clean_span: Span::new(p.clean.len(), p.clean.len() + 1),
            };
            p.raw.push(' ');
            p.clean.push(' ');
            self.emit(&request_id, Payload::ParseEvent { stream: tag.clone(), paragraph: k, event });
        }
        vec![self.start_text(tag, Target::Append { paragraph: k }, request_id, messages)]
    }

    pub fn collapse(&mut self, id: EntityId, request_id: Option<String>) -> Result<(), SessionError> {
        let diffs = self.graph.collapse(id)?;
        self.emit_diffs(&request_id, diffs, false);
        self.emit(&request_id, Payload::RequestComplete { ok: true });
        Ok(())
    }

    pub fn expand(&mut self, id: EntityId, request_id: Option<String>) -> Result<(), SessionError> {
        let diffs = self.graph.expand(id)?;
        self.emit_diffs(&request_id, diffs, false);
        self.emit(&request_id, Payload::RequestComplete { ok: true });
        Ok(())
    }

    pub fn trim(&mut self, id: EntityId, request_id: Option<String>) -> Result<(), SessionError> {
        self.require_idle()?;
        let (diffs, rewrites) = self.graph.trim(id)?;
        self.emit_diffs(&request_id, diffs, false);
        self.rewrite(rewrites, &request_id);
        self.emit(&request_id, Payload::RequestComplete { ok: true });
        Ok(())
    }

    pub fn merge(&mut self, from: EntityId, into: EntityId, request_id: Option<String>) -> Result<(), SessionError> {
        self.require_idle()?;
        let (diffs, rewrites) = self.graph.merge_nodes(from, into)?;
        self.emit_diffs(&request_id, diffs, false);
        self.rewrite(rewrites, &request_id);
        self.emit(&request_id, Payload::RequestComplete { ok: true });
        Ok(())
    }

    fn rewrite(&mut self, rewrites: Vec<TextRewrite>, request_id: &Option<String>) {
        let mut by_paragraph: BTreeMap<usize, Vec<(Span, String)>> = BTreeMap::new();
        for r in rewrites {
            by_paragraph.entry(r.paragraph).or_default().push((r.span, r.replacement));
        }
        for (k, edits) in by_paragraph {
            let Some(p) = self.paragraphs.get_mut(k) else { continue };
            match replace_mentions(&p.raw, &edits) {
                Ok(raw) => {
                    p.raw = raw;
                    p.refresh();
                    let raw = p.raw.clone();
                    self.emit(request_id, Payload::TextRewrite { paragraph: k, raw });
                }
                Err(e) => self.emit(
                    request_id,
                    Payload::Error { code: ErrorCode::TaskFailed, message: e.to_string(), stream: None, paragraph: Some(k) },
                ),
            }
        }
    }

    // ---- streaming ----

    /// Feeds one chunk (or failure) of the running text stream.
    pub fn on_chunk(&mut self, stream: u64, item: Result<TokenChunk, TransportError>) -> Vec<Effect> {
        let Some(mut active) = self.active.take().filter(|a| a.id == stream) else {
            return Vec::new();
        };
        let mut effects = Vec::new();
        match item {
            Ok(chunk) => {
                if !chunk.text.is_empty() {
                    self.emit(&active.request_id, Payload::Token { stream: active.tag.clone(), text: chunk.text.clone() });
                    active.buffer.push_str(&chunk.text);
                    let events = active.parser.feed(&chunk.text);
                    for e in events {
                        effects.extend(self.absorb(&mut active, e));
                    }
                }
                if chunk.terminal {
                    effects.extend(self.end_stream(active, !chunk.truncated));
                } else {
                    self.active = Some(active);
                }
            }
            Err(e) => {
                self.emit(
                    &active.request_id,
                    Payload::Error { code: ErrorCode::Transport, message: e.to_string(), stream: Some(active.tag.clone()), paragraph: None },
                );
                effects.extend(self.end_stream(active, false));
            }
        }
        effects
    }

    fn end_stream(&mut self, mut active: ActiveStream, ok: bool) -> Vec<Effect> {
        let mut effects = Vec::new();
        for e in active.parser.finish() {
            effects.extend(self.absorb(&mut active, e));
        }
        let last = match active.target {
            Target::Response { current } => current,
            Target::Append { paragraph } => Some(paragraph),
        };
        if let Some(k) = last {
            effects.extend(self.complete(k, &active.request_id));
        }
        self.emit(&active.request_id, Payload::RequestComplete { ok });
        effects.extend(self.flush_corrections());
        effects
    }

    /// Routes one parse event of the running stream into the paragraphs
    /// and the graph.
    fn absorb(&mut self, active: &mut ActiveStream, event: ParseEvent) -> Vec<Effect> {
        let mut effects = Vec::new();
        let k = match (&mut active.target, &event) {
            (Target::Response { current }, ParseEvent::ParagraphBreak { .. }) => {
                if let Some(k) = current.take() {
                    effects.extend(self.complete(k, &active.request_id));
                }
                return effects;
            }
            (Target::Response { current: None }, ParseEvent::Text { text, .. }) if text.trim().is_empty() => {
                return effects;
            }
            (Target::Response { current }, _) => match current {
                Some(k) => *k,
                None => {
                    let k = self.paragraphs.len();
                    self.paragraphs.push(ParagraphRecord::new(k));
                    self.emit(&active.request_id, Payload::ParagraphStatus { paragraph: k, status: ParagraphStatus::Streaming });
                    let diffs = self.graph.open_paragraph(k);
                    self.emit_diffs(&active.request_id, diffs, false);
                    *current = Some(k);
                    k
                }
            },
            (Target::Append { paragraph }, _) => *paragraph,
        };

        let (event, piece) = match event {
            ParseEvent::ParagraphBreak { raw_span, clean_span, .. } => {
                (ParseEvent::Text { text: " ".into(), raw_span, clean_span }, " ".to_string())
            }
            e => {
                let piece = e.raw_span().slice(&active.buffer).to_string();
                let offset = self.paragraphs[k].clean.len() as isize - e.clean_span().start as isize;
                self.remap(e, piece, &mut active.remap, &mut active.claimed, k, None, offset, &active.request_id)
            }
        };
        let p = &mut self.paragraphs[k];
        let local = relocate(event, Span::new(p.raw.len(), p.raw.len() + piece.len()), p.clean.len());
        p.raw.push_str(&piece);
        p.clean.push_str(local.clean_text());
        self.note_ids(&local);
        self.emit(&active.request_id, Payload::ParseEvent { stream: active.tag.clone(), paragraph: k, event: local.clone() });
        let diffs = self.graph.apply_event(&local, k);
        self.emit_diffs(&active.request_id, diffs, false);
        effects
    }

    /// Applies the id-collision policy to one event.
    ///
    /// A mention of an id that already names a different entity (no label
    /// or mention matches case-insensitively) is moved to a fresh id, and
    /// later references in the same stream follow it.
    #[allow(clippy::too_many_arguments)]
    fn remap(
        &mut self,
        event: ParseEvent,
        piece: String,
        remap: &mut BTreeMap<EntityId, EntityId>,
        claimed: &mut BTreeSet<EntityId>,
        paragraph: usize,
        sentence: Option<usize>,
        offset: isize,
        request_id: &Option<String>,
    ) -> (ParseEvent, String) {
        match event {
            ParseEvent::Entity { id, label, raw_span, clean_span, irregularities } => {
                let target = match remap.get(&id) {
                    Some(new) => *new,
                    None if claimed.contains(&id) => id,
                    None => {
                        let collides = self.graph.node(id).is_some_and(|n| {
                            let wanted = label.to_lowercase();
                            !n.placeholder
                                && n.label.to_lowercase() != wanted
                                && !n.mentions.iter().any(|m| m.text.to_lowercase() == wanted)
                        });
                        if collides {
                            let new = self.fresh_id();
                            remap.insert(id, new);
                            let local = clean_span.offset_by(offset);
                            self.emit(
                                request_id,
                                Payload::Diagnostic(Diagnostic {
                                    kind: DiagnosticKind::RemappedId,
                                    severity: Severity::Soft,
                                    paragraph,
                                    sentence,
                                    ids: vec![id, new],
                                    relation: None,
                                    pair: None,
                                    span: local,
                                    message: format!("\"{label}\" reused {id}, which names another entity; renumbered to {new}"),
                                }),
                            );
                            new
                        } else {
                            id
                        }
                    }
                };
                claimed.insert(target);
                claimed.insert(id);
                let piece = if target == id { piece } else { render_annotation(&label, &Mark::Entity(target)) };
                (ParseEvent::Entity { id: target, label, raw_span, clean_span, irregularities }, piece)
            }
            ParseEvent::Relation { label, pairs, raw_span, clean_span, irregularities } => {
                let swap = |id: EntityId| remap.get(&id).copied().unwrap_or(id);
                let mapped: Vec<RelationPair> =
                    pairs.iter().map(|p| RelationPair::new(p.saliency, swap(p.source), swap(p.target))).collect();
                let piece = if mapped == pairs { piece } else { render_annotation(&label, &Mark::Relation(mapped.clone())) };
                (ParseEvent::Relation { label, pairs: mapped, raw_span, clean_span, irregularities }, piece)
            }
            other => (other, piece),
        }
    }

    // ---- paragraph pipeline ----

    fn scope(&self) -> Scope {
        let mut scope = Scope::default();
        for p in &self.paragraphs {
            scope.extend(&p.events());
        }
        scope
    }

    fn diagnose(&mut self, k: usize, request_id: &Option<String>) -> Vec<Diagnostic> {
        let scope = self.scope();
        let p = &mut self.paragraphs[k];
        p.refresh();
        let found = detect_paragraph(&p.events(), k, &scope);
        p.diagnostics = found.clone();
        for d in &found {
            self.emit(request_id, Payload::Diagnostic(d.clone()));
        }
        found
    }

    /// Marks a paragraph finished and issues its follow-up tasks.
    fn complete(&mut self, k: usize, request_id: &Option<String>) -> Vec<Effect> {
        if self.paragraphs[k].status == ParagraphStatus::Streaming {
            self.set_status(k, ParagraphStatus::Complete, request_id);
        }
        if self.paragraphs[k].clean.trim().is_empty() {
            return Vec::new();
        }
        self.paragraphs[k].generation += 1;
        let generation = self.paragraphs[k].generation;
        let found = self.diagnose(k, request_id);
        let mut effects = Vec::new();

        if !self.paragraphs[k].correction_issued {
            let mut faulty: BTreeMap<usize, Vec<Diagnostic>> = BTreeMap::new();
            for d in found.iter().filter(|d| {
                d.is_hard() && matches!(d.kind, DiagnosticKind::OrphanNode | DiagnosticKind::DeadEndRelationship)
            }) {
                if let Some(s) = d.sentence {
                    faulty.entry(s).or_default().push(d.clone());
                }
            }
            let history = self.history();
            let mut batch = CorrectionBatch {
                paragraph: k,
                expected: BTreeSet::new(),
                results: BTreeMap::new(),
                request_id: request_id.clone(),
            };
            for (s, diags) in faulty {
                let p = &self.paragraphs[k];
                let Some(sentence) = p.sentences.get(s).map(|x| x.raw.slice(&p.raw).to_string()) else { continue };
                match prompts::build_correction(&history, &sentence, &orphan_ids(&diags), &dead_end_labels(&diags)) {
                    Ok(messages) => {
                        let tag = self.tag(format!("correction/p{k}/s{s}"));
                        effects.push(self.task(TaskKind::Correction { sentence: s }, k, generation, tag, messages, request_id));
                        batch.expected.insert(s);
                    }
                    Err(e) => self.paragraphs[k].failures.push(format!("correction of sentence {s}: {e}")),
                }
            }
            if !batch.expected.is_empty() {
                self.paragraphs[k].correction_issued = true;
                self.set_status(k, ParagraphStatus::Correcting, request_id);
                self.corrections.push_back(batch);
            }
        }

        let raw = self.paragraphs[k].raw.clone();
        let built = [
            (TaskKind::Summary, "summary", prompts::build_summary(&raw)),
            (TaskKind::Outline, "outline", prompts::build_outline(&raw)),
        ];
        for (kind, name, messages) in built {
            match messages {
                Ok(messages) => {
                    let tag = self.tag(format!("{name}/p{k}"));
                    effects.push(self.task(kind, k, generation, tag, messages, request_id));
                }
                Err(e) => self.paragraphs[k].failures.push(format!("{name}: {e}")),
            }
        }
        effects
    }

    fn task(
        &mut self,
        kind: TaskKind,
        paragraph: usize,
        generation: u64,
        tag: String,
        messages: Vec<ChatMessage>,
        request_id: &Option<String>,
    ) -> Effect {
        let task = self.handle();
        self.tasks.insert(task, PendingTask { kind, paragraph, generation, tag: tag.clone(), request_id: request_id.clone() });
        Effect::StartTask { task, tag, messages }
    }

    /// Receives the full text of a finished task stream.
    pub fn on_task(&mut self, task: u64, result: Result<(String, bool), TransportError>) -> Vec<Effect> {
        let Some(t) = self.tasks.remove(&task) else {
            return Vec::new();
        };
        let k = t.paragraph;
        let current = self.paragraphs[k].generation == t.generation;
        let result = result.map(|(text, _)| text).map_err(|e| e.to_string());
        if let Err(message) = &result {
            self.paragraphs[k].failures.push(format!("{}: {message}", t.tag));
            self.emit(
                &t.request_id,
                Payload::Error { code: ErrorCode::TaskFailed, message: message.clone(), stream: Some(t.tag.clone()), paragraph: Some(k) },
            );
        }
        match (t.kind, result) {
            (TaskKind::Correction { sentence }, result) => {
                if let Some(batch) = self.corrections.iter_mut().find(|b| b.paragraph == k && b.expected.contains(&sentence)) {
                    batch.results.insert(sentence, result);
                }
                return self.flush_corrections();
            }
            (TaskKind::Summary, Ok(text)) if current => {
                let events = parse_all(&text);
                self.paragraphs[k].summary = Some(Summary { text: text.clone(), events: events.clone() });
                self.emit(&t.request_id, Payload::SummaryReady { paragraph: k, text, events });
            }
            (TaskKind::Outline, Ok(outline)) if current => {
                self.paragraphs[k].outline = Some(outline.clone());
                self.emit(&t.request_id, Payload::OutlineReady { paragraph: k, outline });
            }
            _ => {}
        }
        Vec::new()
    }

    // ---- corrections ----

    /// Commits finished correction batches in issue order, once no stream
    /// is running.
    fn flush_corrections(&mut self) -> Vec<Effect> {
        while self.active.is_none() && self.corrections.front().is_some_and(CorrectionBatch::ready) {
            let batch = self.corrections.pop_front().expect("front exists");
            self.commit_batch(batch);
        }
        Vec::new()
    }

    fn commit_batch(&mut self, batch: CorrectionBatch) {
        let k = batch.paragraph;
        let rid = batch.request_id;
        let (mut applied, mut rejected) = (Vec::new(), Vec::new());
        // Last sentence first, so earlier indices stay valid.
        for (s, result) in batch.results.into_iter().rev() {
            match result.and_then(|text| self.apply_correction(k, s, &text, &rid)) {
                Ok(()) => applied.push(s),
                Err(message) => {
                    rejected.push(s);
                    self.emit(
                        &rid,
                        Payload::Error { code: ErrorCode::CorrectionRejected, message, stream: None, paragraph: Some(k) },
                    );
                }
            }
        }
        applied.reverse();
        rejected.reverse();
        let diagnostics = self.diagnose(k, &rid);
        let raw = self.paragraphs[k].raw.clone();
        let corrected = !applied.is_empty();
        self.emit(&rid, Payload::CorrectionApplied { paragraph: k, applied, rejected, raw, diagnostics });
        let status = if corrected { ParagraphStatus::Corrected } else { ParagraphStatus::Complete };
        self.set_status(k, status, &rid);
    }

    /// Replaces sentence `s` of paragraph `k` with a corrected annotated
    /// sentence.
    pub fn apply_correction(&mut self, k: usize, s: usize, text: &str, request_id: &Option<String>) -> Result<(), String> {
        let p = self.paragraphs.get(k).ok_or_else(|| format!("no paragraph {k}"))?;
        let events = p.events();
        let sentence = *segment(&events).get(s).ok_or_else(|| format!("paragraph {k} has no sentence {s}"))?;
        let replacement = text.trim();
        let parsed = parse_all(replacement);
        let unusable = parsed
            .iter()
            .any(|e| matches!(e, ParseEvent::ParagraphBreak { .. } | ParseEvent::Malformed { .. }));
        if replacement.is_empty() || unusable {
            return Err(format!("replacement for sentence {s} does not parse as one annotated sentence"));
        }
        let original = sentence.raw.slice(&p.raw).to_string();
        if replacement == original {
            return Ok(());
        }

        let mut claimed: BTreeSet<EntityId> = parse_all(&original).iter().flat_map(ids_of).collect();
        let mut remap = BTreeMap::new();
        let mut rebuilt = String::new();
        for e in parsed {
            let piece = e.raw_span().slice(replacement).to_string();
            let (_, piece) = self.remap(e, piece, &mut remap, &mut claimed, k, Some(s), sentence.clean.start as isize, request_id);
            rebuilt.push_str(&piece);
        }
        let new_events = parse_all(&rebuilt);
        let new_len: usize = new_events.iter().map(|e| e.clean_text().len()).sum();
        let delta = new_len as isize - sentence.clean.len() as isize;

        let mut diffs = self.graph.retract_range(k, sentence.clean);
        diffs.extend(self.graph.shift_spans(k, sentence.clean.end, delta));
        for e in &new_events {
            let local = e.clone().shifted(sentence.raw.start as isize, sentence.clean.start as isize);
            self.note_ids(&local);
            diffs.extend(self.graph.apply_event(&local, k));
        }
        self.emit_diffs(request_id, diffs, true);

        let p = &mut self.paragraphs[k];
        p.raw = format!("{}{}{}", &p.raw[..sentence.raw.start], rebuilt, &p.raw[sentence.raw.end..]);
        p.refresh();
        Ok(())
    }
}
