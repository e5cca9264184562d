//! One question and its follow-ups: the streamed, self-correcting
//! annotated response, its concept graph, and the ordered event log that
//! clients replay.
//!
//! [`SessionState`] holds the logic and is driven synchronously;
//! [`Session`] runs it in a writer task fed by transport streams.

mod actor;
pub mod event;
mod state;

pub use actor::{Op, Session};
pub use event::{golden_lines, ErrorCode, EventLog, Payload, WireEvent};
pub use state::{
    Effect, FollowupKind, ParagraphRecord, ParagraphStatus, SessionError, SessionSnapshot, SessionState, Summary,
};
