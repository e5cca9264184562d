//! Token streams for chat completions: live from an OpenAI-compatible
//! endpoint, replayed from a fixture, or live while recording one.
//!
//! Every stream is started with a tag naming its purpose ("initial",
//! "summary/p0", ...). Replay looks the tag up in the fixture and Record
//! files chunks under it, which keeps replay deterministic when several
//! streams run at once.

pub mod fixture;
pub mod live;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use graphologue_core::prompts::ChatMessage;
use serde::{Deserialize, Serialize};
use tokio::sync::{mpsc, watch};

pub use fixture::{Chunking, Fixture, Recorder};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("invalid transport configuration: {0}")]
    Config(String),
    #[error("environment variable {0} holding the API key is not set")]
    MissingKey(String),
    #[error("cannot read fixture {0}: {1}")]
    FixtureUnreadable(PathBuf, String),
    #[error("fixture line {line}: {reason}")]
    BadFixture { line: usize, reason: String },
    #[error("fixture has no stream tagged {0:?}")]
    MissingStream(String),
    #[error("{endpoint} answered {status}: {detail}")]
    Status { endpoint: String, status: u16, detail: String },
    #[error("request to {endpoint} failed: {reason}")]
    Network { endpoint: String, reason: String },
    #[error("stream from {endpoint} broke off: {reason}")]
    Stream { endpoint: String, reason: String },
}

impl TransportError {
    /// Whether the failure lies with local input rather than the endpoint.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            TransportError::Config(_)
                | TransportError::MissingKey(_)
                | TransportError::FixtureUnreadable(..)
                | TransportError::BadFixture { .. }
                | TransportError::MissingStream(_)
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Live,
    #[default]
    Replay,
    Record,
}

impl std::str::FromStr for Mode {
    type Err = TransportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(Mode::Live),
            "replay" => Ok(Mode::Replay),
            "record" => Ok(Mode::Record),
            other => Err(TransportError::Config(format!("unknown transport mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportConfig {
    pub mode: Mode,
    /// Base URL; "/chat/completions" is appended.
    pub endpoint: Option<String>,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    /// Fixture read in Replay, written in Record.
    pub fixture: Option<PathBuf>,
    /// Replay sleeps until each chunk's recorded offset.
    pub honor_timing: bool,
    pub chunking: Chunking,
    pub retry_backoff: Duration,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Replay,
            endpoint: None,
            model: "gpt-4".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            temperature: 0.0,
            max_tokens: None,
            fixture: None,
            honor_timing: false,
            chunking: Chunking::Recorded,
            retry_backoff: Duration::from_millis(500),
        }
    }
}

impl TransportConfig {
    pub fn replay(fixture: impl Into<PathBuf>) -> Self {
        Self { mode: Mode::Replay, fixture: Some(fixture.into()), ..Self::default() }
    }

    pub fn live(endpoint: impl Into<String>) -> Self {
        Self { mode: Mode::Live, endpoint: Some(endpoint.into()), ..Self::default() }
    }

    fn validate(&self) -> Result<(), TransportError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(TransportError::Config(format!("temperature {} outside 0..=2", self.temperature)));
        }
        match self.mode {
            Mode::Replay if self.fixture.is_none() => Err(TransportError::Config("replay needs a fixture path".into())),
            Mode::Record if self.fixture.is_none() => Err(TransportError::Config("record needs a fixture path".into())),
            Mode::Live | Mode::Record if self.endpoint.is_none() => {
                Err(TransportError::Config("live and record modes need an endpoint".into()))
            }
            _ => Ok(()),
        }
    }
}

/// One piece of a stream. The last chunk of every stream is terminal and
/// carries no text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenChunk {
    pub text: String,
    pub terminal: bool,
    /// Set on the terminal chunk of a cancelled stream.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ms: Option<u64>,
}

impl TokenChunk {
    pub fn text(text: impl Into<String>, ms: Option<u64>) -> Self {
        Self { text: text.into(), terminal: false, truncated: false, ms }
    }

    pub fn end() -> Self {
        Self { text: String::new(), terminal: true, truncated: false, ms: None }
    }

    pub fn truncated() -> Self {
        Self { truncated: true, ..Self::end() }
    }
}

/// Cancels a stream; cheap to clone and idempotent.
#[derive(Debug, Clone)]
pub struct Canceller(Arc<watch::Sender<bool>>);

impl Canceller {
    pub fn cancel(&self) {
        self.0.send_replace(true);
    }

    pub fn is_cancelled(&self) -> bool {
        *self.0.borrow()
    }
}

type Item = Result<TokenChunk, TransportError>;

/// Receiving end of one stream.
#[derive(Debug)]
pub struct StreamHandle {
    tag: String,
    rx: mpsc::Receiver<Item>,
    cancel: Canceller,
    cancelled: watch::Receiver<bool>,
    finished: bool,
}

impl StreamHandle {
    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn canceller(&self) -> Canceller {
        self.cancel.clone()
    }

    pub fn cancel(&self) {
        self.cancel.cancel();
    }

    /// Next chunk; `None` once the terminal chunk or an error was returned.
    pub async fn next(&mut self) -> Option<Item> {
        if self.finished {
            return None;
        }
        if *self.cancelled.borrow() {
            self.finished = true;
            return Some(Ok(TokenChunk::truncated()));
        }
        let item = tokio::select! {
            biased;
            _ = self.cancelled.changed() => Some(Ok(TokenChunk::truncated())),
            item = self.rx.recv() => item,
        };
        let item = item.unwrap_or_else(|| Ok(TokenChunk::end()));
        if !matches!(&item, Ok(c) if !c.terminal) {
            self.finished = true;
        }
        Some(item)
    }

    /// Drains the stream into its text and whether it was cut short.
    pub async fn collect(mut self) -> Result<(String, bool), TransportError> {
        let mut text = String::new();
        while let Some(item) = self.next().await {
            let chunk = item?;
            text.push_str(&chunk.text);
            if chunk.terminal {
                return Ok((text, chunk.truncated));
            }
        }
        Ok((text, false))
    }
}

#[derive(Debug)]
enum Backend {
    Replay(Arc<Fixture>),
    Live { client: reqwest::Client, key: String, recorder: Option<Arc<Recorder>> },
}

/// Starts streams according to a [`TransportConfig`].
#[derive(Debug, Clone)]
pub struct Transport {
    config: Arc<TransportConfig>,
    backend: Arc<Backend>,
}

impl Transport {
    /// Validates the configuration; Replay loads its fixture, Record creates
    /// its output file, and Live/Record read the API key from the
    /// environment.
    pub fn new(config: TransportConfig) -> Result<Self, TransportError> {
        config.validate()?;
        let backend = match config.mode {
            Mode::Replay => Backend::Replay(Arc::new(Fixture::load(config.fixture.as_ref().expect("validated"))?)),
            Mode::Live | Mode::Record => {
                let key = std::env::var(&config.api_key_env).map_err(|_| TransportError::MissingKey(config.api_key_env.clone()))?;
                let recorder = match config.mode {
                    Mode::Record => Some(Arc::new(Recorder::create(config.fixture.as_ref().expect("validated"))?)),
                    _ => None,
                };
                Backend::Live { client: reqwest::Client::new(), key, recorder }
            }
        };
        Ok(Self { config: Arc::new(config), backend: Arc::new(backend) })
    }

    /// A replay transport over an in-memory fixture.
    pub fn from_fixture(fixture: Fixture, chunking: Chunking) -> Self {
        let config = TransportConfig { chunking, ..TransportConfig::default() };
        Self { config: Arc::new(config), backend: Arc::new(Backend::Replay(Arc::new(fixture))) }
    }

    pub fn config(&self) -> &TransportConfig {
        &self.config
    }

    /// Question stored in a replay fixture, if any.
    pub fn fixture_question(&self) -> Option<&str> {
        match self.backend.as_ref() {
            Backend::Replay(f) => f.question.as_deref(),
            Backend::Live { .. } => None,
        }
    }

    /// Records the session question in Record mode; otherwise does nothing.
    pub fn note_question(&self, question: &str) -> Result<(), TransportError> {
        match self.backend.as_ref() {
            Backend::Live { recorder: Some(r), .. } => r.note_question(question),
            _ => Ok(()),
        }
    }

    /// Starts a stream. Must be called inside a Tokio runtime.
    pub fn start_stream(&self, tag: &str, messages: &[ChatMessage]) -> StreamHandle {
        let (tx, rx) = mpsc::channel(64);
        let (cancel_tx, cancelled) = watch::channel(false);
        let cancel = Canceller(Arc::new(cancel_tx));
        let stop = cancelled.clone();
        match self.backend.as_ref() {
            Backend::Replay(fixture) => {
                let chunks = fixture.streams.get(tag).map(|c| self.config.chunking.apply(c));
                let timing = self.config.honor_timing;
                let tag = tag.to_string();
                tokio::spawn(async move {
                    let Some(chunks) = chunks else {
                        let _ = tx.send(Err(TransportError::MissingStream(tag))).await;
                        return;
                    };
                    replay(chunks, timing, tx, stop).await;
                });
            }
            Backend::Live { client, key, recorder } => {
                let body = serde_json::to_value(live::RequestBody {
                    model: &self.config.model,
                    messages,
                    stream: true,
                    temperature: self.config.temperature,
                    max_tokens: self.config.max_tokens,
                })
                .expect("serializable");
                let job = LiveJob {
                    client: client.clone(),
                    key: key.clone(),
                    endpoint: self.config.endpoint.clone().expect("validated"),
                    body,
                    backoff: self.config.retry_backoff,
                    recorder: recorder.clone(),
                    tag: tag.to_string(),
                };
                tokio::spawn(job.run(tx, stop));
            }
        }
        StreamHandle { tag: tag.to_string(), rx, cancel, cancelled, finished: false }
    }
}

async fn replay(chunks: Vec<(Option<u64>, String)>, timing: bool, tx: mpsc::Sender<Item>, stop: watch::Receiver<bool>) {
    let start = tokio::time::Instant::now();
    for (ms, text) in chunks {
        if timing {
            if let Some(ms) = ms {
                tokio::time::sleep_until(start + Duration::from_millis(ms)).await;
            }
        }
        if *stop.borrow() || tx.send(Ok(TokenChunk::text(text, ms))).await.is_err() {
            return;
        }
    }
    let _ = tx.send(Ok(TokenChunk::end())).await;
}

struct LiveJob {
    client: reqwest::Client,
    key: String,
    endpoint: String,
    body: serde_json::Value,
    backoff: Duration,
    recorder: Option<Arc<Recorder>>,
    tag: String,
}

impl LiveJob {
    async fn run(self, tx: mpsc::Sender<Item>, mut stop: watch::Receiver<bool>) {
        let opened = tokio::select! {
            _ = stop.changed() => return,
            r = live::open(&self.client, &self.endpoint, &self.key, &self.body, self.backoff) => r,
        };
        let response = match opened {
            Ok(r) => r,
            Err(e) => {
                let _ = tx.send(Err(e)).await;
                return;
            }
        };
        let started = Instant::now();
        let mut recorded: Vec<(u64, String)> = Vec::new();
        let mut lines = live::Lines::new(Box::pin(response.bytes_stream()));
        loop {
            let line = tokio::select! {
                _ = stop.changed() => return,
                l = lines.next_line() => l,
            };
            let frame = match line {
                None => live::Frame::Done,
                Some(Ok(l)) => live::parse_line(&l),
                Some(Err(reason)) => {
                    let _ = tx.send(Err(TransportError::Stream { endpoint: self.endpoint.clone(), reason })).await;
                    return;
                }
            };
            match frame {
                live::Frame::Delta(text) => {
                    let ms = started.elapsed().as_millis() as u64;
                    recorded.push((ms, text.clone()));
                    if tx.send(Ok(TokenChunk::text(text, Some(ms)))).await.is_err() {
                        return;
                    }
                }
                live::Frame::Done => break,
                live::Frame::Skip => {}
                live::Frame::Error(reason) => {
                    let _ = tx.send(Err(TransportError::Stream { endpoint: self.endpoint.clone(), reason })).await;
                    return;
                }
            }
        }
        if let Some(r) = &self.recorder {
            if let Err(e) = r.write_stream(&self.tag, &recorded) {
                let _ = tx.send(Err(e)).await;
                return;
            }
        }
        let _ = tx.send(Ok(TokenChunk::end())).await;
    }
}
