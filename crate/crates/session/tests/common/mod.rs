#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use graphologue_core::prompts::ChatMessage;
use graphologue_session::{Effect, EventLog, Op, Session, SessionState};
use graphologue_transport::{Chunking, Fixture, TokenChunk, Transport, TransportError};

pub const FAULTY: &str = "how-do-earthquakes-happen";
pub const CLEAN: &str = "what-is-an-earthquake";

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(format!("{name}.ndjson"))
}

pub fn fixture(name: &str) -> Fixture {
    Fixture::load(&fixture_path(name)).unwrap()
}

pub fn chunkings() -> Vec<Chunking> {
    vec![
        Chunking::Recorded,
        Chunking::Fixed(1),
        Chunking::Fixed(7),
        Chunking::Cycle(vec![1, 3, 11, 2]),
        Chunking::Fixed(10_000),
    ]
}

/// Runs the question of a fixture through a real session and waits for
/// every task to finish.
pub async fn replay(fixture: &Fixture, chunking: Chunking) -> Session {
    let transport = Arc::new(Transport::from_fixture(fixture.clone(), chunking));
    let session = Session::spawn("s", transport, Arc::new(EventLog::new()));
    let q = fixture.question.clone().unwrap();
    session.run(Op::Ask(q), Some("ask".into())).await.unwrap();
    session.settled().await;
    session
}

/// Drives a [`SessionState`] by hand: text streams are fed whole when
/// started, tasks wait until resolved.
pub struct Driver {
    pub state: SessionState,
    pub fixture: Fixture,
    pub chunking: Chunking,
    pub tasks: Vec<(u64, String)>,
    pub requests: Vec<(String, Vec<ChatMessage>)>,
}

impl Driver {
    pub fn new(fixture: Fixture, chunking: Chunking) -> Self {
        Self {
            state: SessionState::new("d", Arc::new(EventLog::new())),
            fixture,
            chunking,
            tasks: Vec::new(),
            requests: Vec::new(),
        }
    }

    pub fn run(&mut self, effects: Vec<Effect>) {
        for effect in effects {
            match effect {
                Effect::StartText { stream, tag, messages } => {
                    self.requests.push((tag.clone(), messages));
                    let Some(chunks) = self.fixture.streams.get(&tag) else {
                        let more = self.state.on_chunk(stream, Err(TransportError::MissingStream(tag)));
                        self.run(more);
                        continue;
                    };
                    for (ms, text) in self.chunking.apply(chunks) {
                        let more = self.state.on_chunk(stream, Ok(TokenChunk::text(text, ms)));
                        self.run(more);
                    }
                    let more = self.state.on_chunk(stream, Ok(TokenChunk::end()));
                    self.run(more);
                }
                Effect::StartTask { task, tag, messages } => {
                    self.requests.push((tag.clone(), messages));
                    self.tasks.push((task, tag));
                }
            }
        }
    }

    pub fn ask(&mut self) {
        let q = self.fixture.question.clone().unwrap();
        let effects = self.state.ask(&q, Some("ask".into())).unwrap();
        self.run(effects);
    }

    /// Resolves every outstanding task, newest first when `reverse`.
    pub fn resolve(&mut self, reverse: bool) {
        while !self.tasks.is_empty() {
            let (task, tag) = if reverse { self.tasks.pop().unwrap() } else { self.tasks.remove(0) };
            let result = self.fixture.text(&tag).map(|t| (t, false)).ok_or(TransportError::MissingStream(tag));
            let more = self.state.on_task(task, result);
            self.run(more);
        }
    }

    pub fn request(&self, tag: &str) -> Option<&[ChatMessage]> {
        self.requests.iter().find(|(t, _)| t == tag).map(|(_, m)| m.as_slice())
    }
}
