//! The writer task that owns a session.

use std::sync::Arc;

use graphologue_core::annotation::EntityId;
use graphologue_transport::{TokenChunk, Transport, TransportError};
use tokio::sync::{mpsc, oneshot, watch};

use crate::event::EventLog;
use crate::state::{Effect, FollowupKind, SessionError, SessionState};

/// A state-changing request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Op {
    Ask(String),
    Followup(EntityId, FollowupKind),
    TellMeMore(usize),
    AddParagraph,
    Collapse(EntityId),
    Expand(EntityId),
    Trim(EntityId),
    Merge { from: EntityId, into: EntityId },
}

type Reply = oneshot::Sender<Result<(), SessionError>>;
type Reader = Box<dyn FnOnce(&SessionState) + Send>;

enum Msg {
    Op { op: Op, request_id: Option<String>, reply: Reply },
    Read(Reader),
    Chunk { stream: u64, item: Result<TokenChunk, TransportError> },
    Task { task: u64, result: Result<(String, bool), TransportError> },
}

/// Handle to a running session. Cloning shares the same writer.
#[derive(Clone)]
pub struct Session {
    id: String,
    tx: mpsc::UnboundedSender<Msg>,
    log: Arc<EventLog>,
    settled: watch::Receiver<bool>,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session").field("id", &self.id).finish_non_exhaustive()
    }
}

impl Session {
    /// Starts the writer task. Must be called inside a tokio runtime.
    pub fn spawn(id: impl Into<String>, transport: Arc<Transport>, log: Arc<EventLog>) -> Self {
        let id = id.into();
        let (tx, rx) = mpsc::unbounded_channel();
        let (settled_tx, settled) = watch::channel(true);
        let state = SessionState::new(id.clone(), log.clone());
        tokio::spawn(writer(state, transport, rx, tx.clone(), settled_tx));
        Self { id, tx, log, settled }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn log(&self) -> &Arc<EventLog> {
        &self.log
    }

    /// Runs an operation. Returns once it is accepted; for streaming
    /// operations that is after the first chunk arrives, so transport
    /// failures surface here as well as in the log.
    pub async fn run(&self, op: Op, request_id: Option<String>) -> Result<(), SessionError> {
        let (reply, rx) = oneshot::channel();
        self.tx
            .send(Msg::Op { op, request_id, reply })
            .map_err(|_| SessionError::Conflict("session closed".into()))?;
        rx.await.unwrap_or_else(|_| Err(SessionError::Conflict("session closed".into())))
    }

    /// Reads a consistent view of the state.
    pub async fn read<T: Send + 'static>(&self, f: impl FnOnce(&SessionState) -> T + Send + 'static) -> T {
        let (tx, rx) = oneshot::channel();
        let reader: Reader = Box::new(move |s| {
            let _ = tx.send(f(s));
        });
        self.tx.send(Msg::Read(reader)).expect("writer outlives its handles");
        rx.await.expect("writer answers every read")
    }

    /// Waits until no stream, task or correction is outstanding.
    pub async fn settled(&self) {
        let mut rx = self.settled.clone();
        let _ = rx.wait_for(|s| *s).await;
    }
}

fn apply(state: &mut SessionState, op: Op, request_id: Option<String>) -> Result<Vec<Effect>, SessionError> {
    match op {
        Op::Ask(q) => state.ask(&q, request_id),
        Op::Followup(id, kind) => state.followup(id, kind, request_id),
        Op::TellMeMore(k) => state.tell_me_more(k, request_id),
        Op::AddParagraph => state.add_paragraph(request_id),
        Op::Collapse(id) => state.collapse(id, request_id).map(|_| Vec::new()),
        Op::Expand(id) => state.expand(id, request_id).map(|_| Vec::new()),
        Op::Trim(id) => state.trim(id, request_id).map(|_| Vec::new()),
        Op::Merge { from, into } => state.merge(from, into, request_id).map(|_| Vec::new()),
    }
}

async fn writer(
    mut state: SessionState,
    transport: Arc<Transport>,
    mut rx: mpsc::UnboundedReceiver<Msg>,
    tx: mpsc::UnboundedSender<Msg>,
    settled: watch::Sender<bool>,
) {
    while let Some(msg) = rx.recv().await {
        let (effects, reply) = match msg {
            Msg::Op { op, request_id, reply } => match apply(&mut state, op.clone(), request_id) {
                Ok(effects) => {
                    match &op {
                        Op::Ask(q) => match transport.note_question(q) {
                            Ok(()) => (effects, Some(reply)),
                            Err(e) => {
                                let _ = reply.send(Err(SessionError::Transport(e.to_string())));
                                (effects, None)
                            }
                        },
                        _ => (effects, Some(reply)),
                    }
                }
                Err(e) => {
                    let _ = reply.send(Err(e));
                    (Vec::new(), None)
                }
            },
            Msg::Read(f) => {
                f(&state);
                continue;
            }
            Msg::Chunk { stream, item } => (state.on_chunk(stream, item), None),
            Msg::Task { task, result } => (state.on_task(task, result), None),
        };
        settled.send_replace(state.is_settled());
        execute(effects, reply, &transport, &tx);
    }
}

fn execute(effects: Vec<Effect>, mut reply: Option<Reply>, transport: &Arc<Transport>, tx: &mpsc::UnboundedSender<Msg>) {
    for effect in effects {
        match effect {
            Effect::StartText { stream, tag, messages } => {
                let (transport, tx, reply) = (transport.clone(), tx.clone(), reply.take());
                tokio::spawn(async move {
                    let mut handle = transport.start_stream(&tag, &messages);
                    let mut reply = reply;
                    let mut ended = false;
                    while let Some(item) = handle.next().await {
                        if let Some(r) = reply.take() {
                            let _ = r.send(item.as_ref().map(|_| ()).map_err(|e| SessionError::Transport(e.to_string())));
                        }
                        ended = item.as_ref().map_or(true, |c| c.terminal);
                        if tx.send(Msg::Chunk { stream, item }).is_err() || ended {
                            break;
                        }
                    }
                    if !ended {
                        let _ = tx.send(Msg::Chunk { stream, item: Ok(TokenChunk::end()) });
                    }
                    if let Some(r) = reply {
                        let _ = r.send(Ok(()));
                    }
                });
            }
            Effect::StartTask { task, tag, messages } => {
                let (transport, tx) = (transport.clone(), tx.clone());
                tokio::spawn(async move {
                    let result = transport.start_stream(&tag, &messages).collect().await;
                    let _ = tx.send(Msg::Task { task, result });
                });
            }
        }
    }
    if let Some(r) = reply {
        let _ = r.send(Ok(()));
    }
}
