//! Recorded streams.
//!
//! A fixture is UTF-8 newline-delimited JSON. An optional meta line names
//! the question; every other line is one chunk of one stream:
//!
//! ```text
//! {"question":"What is an earthquake?"}
//! {"stream":"initial","ms":0,"text":"[Earthquakes ($N1)] "}
//! {"stream":"initial","ms":42,"text":"[are ($H, $N1, $N2)]"}
//! {"stream":"summary/p0","ms":0,"text":"..."}
//! ```
//!
//! `ms` is the offset from the start of the stream. Blank lines are ignored.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::TransportError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub stream: String,
    #[serde(default)]
    pub ms: u64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Meta {
    question: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Fixture {
    pub question: Option<String>,
    /// Chunks per stream tag, in file order.
    pub streams: BTreeMap<String, Vec<(u64, String)>>,
}

impl Fixture {
    pub fn parse(text: &str) -> Result<Self, TransportError> {
        let mut f = Fixture::default();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            if let Ok(r) = serde_json::from_str::<Record>(line) {
                f.streams.entry(r.stream).or_default().push((r.ms, r.text));
            } else if let Ok(m) = serde_json::from_str::<Meta>(line) {
                f.question = Some(m.question);
            } else {
                return Err(TransportError::BadFixture { line: n + 1, reason: "not a chunk or meta record".into() });
            }
        }
        Ok(f)
    }

    pub fn load(path: &Path) -> Result<Self, TransportError> {
        let text = std::fs::read_to_string(path).map_err(|e| TransportError::FixtureUnreadable(path.to_path_buf(), e.to_string()))?;
        Self::parse(&text)
    }

    /// Full text of a stream.
    pub fn text(&self, stream: &str) -> Option<String> {
        self.streams.get(stream).map(|chunks| chunks.iter().map(|(_, t)| t.as_str()).collect())
    }

    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        if let Some(q) = &self.question {
            out.push_str(&serde_json::to_string(&Meta { question: q.clone() }).expect("serializable"));
            out.push('\n');
        }
        for (stream, chunks) in &self.streams {
            for (ms, text) in chunks {
                let r = Record { stream: stream.clone(), ms: *ms, text: text.clone() };
                out.push_str(&serde_json::to_string(&r).expect("serializable"));
                out.push('\n');
            }
        }
        out
    }
}

/// How replayed text is cut into chunks.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum Chunking {
    /// As recorded.
    #[default]
    Recorded,
    /// Every chunk holds this many chars (the last may be shorter).
    Fixed(usize),
    /// Chunk sizes in chars, cycled.
    Cycle(Vec<usize>),
}

impl Chunking {
    pub fn apply(&self, chunks: &[(u64, String)]) -> Vec<(Option<u64>, String)> {
        let sizes: Vec<usize> = match self {
            Chunking::Recorded => return chunks.iter().map(|(ms, t)| (Some(*ms), t.clone())).collect(),
            Chunking::Fixed(n) => vec![(*n).max(1)],
            Chunking::Cycle(v) if v.iter().any(|n| *n > 0) => v.iter().copied().filter(|n| *n > 0).collect(),
            Chunking::Cycle(_) => vec![1],
        };
        let text: String = chunks.iter().map(|(_, t)| t.as_str()).collect();
        let mut out = Vec::new();
        let mut chars = text.chars().peekable();
        for size in sizes.iter().cycle() {
            if chars.peek().is_none() {
                break;
            }
            out.push((None, chars.by_ref().take(*size).collect()));
        }
        out
    }
}

/// Appends recorded streams to a fixture file.
#[derive(Debug)]
pub struct Recorder {
    path: PathBuf,
    lock: Mutex<()>,
}

impl Recorder {
    /// Creates (or truncates) the fixture file.
    pub fn create(path: &Path) -> Result<Self, TransportError> {
        std::fs::write(path, "").map_err(|e| TransportError::FixtureUnreadable(path.to_path_buf(), e.to_string()))?;
        Ok(Self { path: path.to_path_buf(), lock: Mutex::new(()) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn note_question(&self, question: &str) -> Result<(), TransportError> {
        let line = serde_json::to_string(&Meta { question: question.to_string() }).expect("serializable");
        self.append(&[line])
    }

    /// Writes one finished stream as a block of lines.
    pub fn write_stream(&self, stream: &str, chunks: &[(u64, String)]) -> Result<(), TransportError> {
        let lines: Vec<String> = chunks
            .iter()
            .map(|(ms, text)| {
                serde_json::to_string(&Record { stream: stream.to_string(), ms: *ms, text: text.clone() }).expect("serializable")
            })
            .collect();
        self.append(&lines)
    }

    fn append(&self, lines: &[String]) -> Result<(), TransportError> {
        let _guard = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        let io = |e: std::io::Error| TransportError::FixtureUnreadable(self.path.clone(), e.to_string());
        let mut file = std::fs::OpenOptions::new().append(true).open(&self.path).map_err(io)?;
        let mut block = lines.join("\n");
        block.push('\n');
        file.write_all(block.as_bytes()).map_err(io)
    }
}
