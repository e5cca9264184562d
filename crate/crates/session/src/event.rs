//! The ordered per-session event log.

use std::io::Write;
use std::path::Path;
use std::sync::{Mutex, RwLock};

use graphologue_core::annotation::ParseEvent;
use graphologue_core::diagnostics::Diagnostic;
use graphologue_core::graph::GraphDiff;
use serde::{Deserialize, Serialize};
use tokio::sync::watch;

use crate::ParagraphStatus;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireEvent {
    pub seq: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
    #[serde(flatten)]
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "kebab-case")]
pub enum Payload {
    Token {
        stream: String,
        text: String,
    },
    /// Spans are relative to the paragraph.
    ParseEvent {
        stream: String,
        paragraph: usize,
        event: ParseEvent,
    },
    GraphDiff(GraphDiff),
    ParagraphStatus {
        paragraph: usize,
        status: ParagraphStatus,
    },
    SummaryReady {
        paragraph: usize,
        text: String,
        events: Vec<ParseEvent>,
    },
    OutlineReady {
        paragraph: usize,
        outline: String,
    },
    Diagnostic(Diagnostic),
    CorrectionApplied {
        paragraph: usize,
        applied: Vec<usize>,
        rejected: Vec<usize>,
        raw: String,
        diagnostics: Vec<Diagnostic>,
    },
    /// A paragraph's annotated text after a trim or merge.
    TextRewrite {
        paragraph: usize,
        raw: String,
    },
    Error {
        code: ErrorCode,
        message: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stream: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        paragraph: Option<usize>,
    },
    /// Closes the work started by one request.
    RequestComplete {
        ok: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorCode {
    Transport,
    TaskFailed,
    CorrectionRejected,
}

impl Payload {
    pub fn type_name(&self) -> &'static str {
        match self {
            Payload::Token { .. } => "token",
            Payload::ParseEvent { .. } => "parse-event",
            Payload::GraphDiff(_) => "graph-diff",
            Payload::ParagraphStatus { .. } => "paragraph-status",
            Payload::SummaryReady { .. } => "summary-ready",
            Payload::OutlineReady { .. } => "outline-ready",
            Payload::Diagnostic(_) => "diagnostic",
            Payload::CorrectionApplied { .. } => "correction-applied",
            Payload::TextRewrite { .. } => "text-rewrite",
            Payload::Error { .. } => "error",
            Payload::RequestComplete { .. } => "request-complete",
        }
    }

    /// Whether the payload is fixed by the fixture text alone, independent
    /// of chunking and of when parallel tasks finish.
    pub fn is_deterministic(&self) -> bool {
        matches!(
            self,
            Payload::ParseEvent { .. }
                | Payload::GraphDiff(_)
                | Payload::ParagraphStatus { .. }
                | Payload::Diagnostic(_)
                | Payload::CorrectionApplied { .. }
                | Payload::TextRewrite { .. }
        )
    }
}

/// The golden form of a log: deterministic payloads, one JSON line each,
/// without seq or request ids.
pub fn golden_lines(events: &[WireEvent]) -> Vec<String> {
    events
        .iter()
        .filter(|e| e.payload.is_deterministic())
        .map(|e| serde_json::to_string(&e.payload).expect("payloads serialize"))
        .collect()
}

/// Append-only, seq-numbered log with change notification.
///
/// Seqs start at 1, so reading from 0 yields everything.
#[derive(Debug)]
pub struct EventLog {
    events: RwLock<Vec<WireEvent>>,
    latest: watch::Sender<u64>,
    persist: Option<Mutex<std::fs::File>>,
}

impl Default for EventLog {
    fn default() -> Self {
        Self::new()
    }
}

impl EventLog {
    pub fn new() -> Self {
        Self { events: RwLock::new(Vec::new()), latest: watch::Sender::new(0), persist: None }
    }

    /// A log that also appends every event as a JSON line to `path`.
    pub fn persisted(path: &Path) -> std::io::Result<Self> {
        let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { persist: Some(Mutex::new(file)), ..Self::new() })
    }

    pub fn push(&self, request_id: Option<String>, payload: Payload) -> u64 {
        let mut events = self.events.write().unwrap_or_else(|e| e.into_inner());
        let seq = events.len() as u64 + 1;
        let event = WireEvent { seq, request_id, payload };
        if let Some(file) = &self.persist {
            let mut file = file.lock().unwrap_or_else(|e| e.into_inner());
            let line = serde_json::to_string(&event).expect("events serialize");
            let _ = writeln!(file, "{line}");
        }
        events.push(event);
        drop(events);
        self.latest.send_replace(seq);
        seq
    }

    pub fn last_seq(&self) -> u64 {
        self.events.read().unwrap_or_else(|e| e.into_inner()).len() as u64
    }

    /// Events with seq greater than `after`.
    pub fn since(&self, after: u64) -> Vec<WireEvent> {
        let events = self.events.read().unwrap_or_else(|e| e.into_inner());
        events.iter().skip(after.min(events.len() as u64) as usize).cloned().collect()
    }

    pub fn all(&self) -> Vec<WireEvent> {
        self.since(0)
    }

    /// Receiver notified with the latest seq after every push.
    pub fn subscribe(&self) -> watch::Receiver<u64> {
        self.latest.subscribe()
    }
}
