//! Core model for turning inline-annotated LLM responses into concept graphs.
//!
//! The pieces, bottom-up:
//!
//! * [`annotation`]: the streaming grammar for `[label ($N1)]` entity and
//!   `[label ($H, $N1, $N2; ...)]` relationship markup.
//! * [`sentences`]: sentence segmentation over annotation-stripped text.
//! * [`graph`]: the session concept graph, its diagram operations and the
//!   diff records clients replay.
//! * [`diagnostics`]: machine-detectable annotation errors.
//! * [`eval`]: gold-reference scoring and precision/recall/F arithmetic.
//! * [`prompts`]: the chat prompt templates and their slot filling.

pub mod annotation;
pub mod diagnostics;
pub mod eval;
pub mod graph;
pub mod prompts;
pub mod sentences;

pub use annotation::{
    parse_all, serialize, strip_annotations, Annotation, EntityId, Irregularity, Mark,
    MalformedReason, ParseEvent, RelationPair, Saliency, Span, StreamParser,
};
pub use diagnostics::{detect, Diagnostic, DiagnosticKind, Severity};
pub use eval::{compute_prf, score_against_gold, GoldReport, PrfScore};
pub use graph::{GraphDiff, SessionGraph};
