//! Chat prompt construction.
//!
//! Template text lives in `assets/prompts/<version>/` and is compiled in.
//! Templates use `{{slot}}` substitution and `{{#if slot}}...{{/if}}` blocks
//! that are kept only when the slot is non-empty.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::annotation::{max_entity_id, parse_all, EntityId, MalformedReason, ParseEvent};

pub const TEMPLATE_VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self { role, content: content.into() }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::new(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::new(Role::Assistant, content)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptKind {
    Initial,
    SelfCorrection,
    Summary,
    Outline,
    NodeExplain,
    NodeExamples,
    TellMeMore,
    AddParagraph,
}

impl PromptKind {
    pub const ALL: [PromptKind; 8] = [
        PromptKind::Initial,
        PromptKind::SelfCorrection,
        PromptKind::Summary,
        PromptKind::Outline,
        PromptKind::NodeExplain,
        PromptKind::NodeExamples,
        PromptKind::TellMeMore,
        PromptKind::AddParagraph,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PromptKind::Initial => "initial",
            PromptKind::SelfCorrection => "self-correction",
            PromptKind::Summary => "summary",
            PromptKind::Outline => "outline",
            PromptKind::NodeExplain => "node-explain",
            PromptKind::NodeExamples => "node-examples",
            PromptKind::TellMeMore => "tell-me-more",
            PromptKind::AddParagraph => "add-paragraph",
        }
    }

    /// Asset file name within the template directory.
    pub fn asset(self) -> &'static str {
        match self {
            PromptKind::Initial => "initial.system.txt",
            PromptKind::SelfCorrection => "correction.system.txt",
            PromptKind::Summary => "summary.system.txt",
            PromptKind::Outline => "outline.system.txt",
            PromptKind::NodeExplain => "explain.user.txt",
            PromptKind::NodeExamples => "examples.user.txt",
            PromptKind::TellMeMore => "tell-me-more.user.txt",
            PromptKind::AddParagraph => "add-paragraph.user.txt",
        }
    }

    /// Raw template text.
    pub fn template(self) -> &'static str {
        match self {
            PromptKind::Initial => include_str!("../assets/prompts/v1/initial.system.txt"),
            PromptKind::SelfCorrection => include_str!("../assets/prompts/v1/correction.system.txt"),
            PromptKind::Summary => include_str!("../assets/prompts/v1/summary.system.txt"),
            PromptKind::Outline => include_str!("../assets/prompts/v1/outline.system.txt"),
            PromptKind::NodeExplain => include_str!("../assets/prompts/v1/explain.user.txt"),
            PromptKind::NodeExamples => include_str!("../assets/prompts/v1/examples.user.txt"),
            PromptKind::TellMeMore => include_str!("../assets/prompts/v1/tell-me-more.user.txt"),
            PromptKind::AddParagraph => include_str!("../assets/prompts/v1/add-paragraph.user.txt"),
        }
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PromptKind {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.to_ascii_lowercase().replace('_', "-");
        Self::ALL
            .into_iter()
            .find(|k| k.name() == wanted || (wanted == "correction" && *k == PromptKind::SelfCorrection))
            .ok_or_else(|| PromptError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("the question is empty")]
    EmptyQuestion,
    #[error("no orphan entities or dead-end relationships to correct")]
    NothingToCorrect,
    #[error("the sentence to correct is empty")]
    EmptySentence,
    #[error("the sentence does not appear in the last assistant message")]
    SentenceNotInHistory,
    #[error("the paragraph is empty or ends inside an annotation")]
    IncompleteParagraph,
    #[error("entity label {0:?} does not occur in the sentence")]
    LabelNotInSentence(String),
    #[error("{0} is not valid for this builder")]
    WrongKind(PromptKind),
    #[error("tell-me-more needs a target paragraph")]
    MissingParagraph,
    #[error("unknown prompt kind {0:?}")]
    UnknownKind(String),
    #[error("template refers to unknown slot {0:?}")]
    UnknownSlot(String),
}

/// Fills `{{slot}}` and `{{#if slot}}...{{/if}}` from `vars`.
pub fn render(template: &str, vars: &[(&str, &str)]) -> Result<String, PromptError> {
    let lookup = |name: &str| {
        vars.iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| PromptError::UnknownSlot(name.to_string()))
    };
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        let close = after.find("}}").ok_or_else(|| PromptError::UnknownSlot(after.to_string()))?;
        let tag = after[..close].trim();
        rest = &after[close + 2..];
        if let Some(name) = tag.strip_prefix("#if ") {
            let end = rest.find("{{/if}}").ok_or_else(|| PromptError::UnknownSlot(tag.to_string()))?;
            if !lookup(name.trim())?.is_empty() {
                out.push_str(&render(&rest[..end], vars)?);
            }
            rest = &rest[end + "{{/if}}".len()..];
        } else {
            out.push_str(lookup(tag)?);
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// Next id for new entities given the largest one in use.
pub fn next_entity_id(max: Option<EntityId>) -> EntityId {
    max.map_or(EntityId::new(1).expect("1 is non-zero"), EntityId::next)
}

/// Largest id annotated in the assistant turns of a conversation.
pub fn history_max_id(history: &[ChatMessage]) -> Option<EntityId> {
    history
        .iter()
        .filter(|m| m.role == Role::Assistant)
        .filter_map(|m| max_entity_id(&parse_all(&m.content)))
        .max()
}

/// Values for the id-continuation sentence. Without any prior id the
/// template's own example numbers are kept.
fn id_hint(next: Option<EntityId>) -> (String, String) {
    match next {
        Some(n) if n.get() > 1 => (format!("$N{}", n.get() - 1), n.to_string()),
        _ => ("$N102".to_string(), "$N103".to_string()),
    }
}

fn with_message(history: &[ChatMessage], message: ChatMessage) -> Vec<ChatMessage> {
    let mut out = history.to_vec();
    out.push(message);
    out
}

pub fn build_initial(question: &str) -> Result<Vec<ChatMessage>, PromptError> {
    if question.trim().is_empty() {
        return Err(PromptError::EmptyQuestion);
    }
    Ok(vec![
        ChatMessage::system(PromptKind::Initial.template()),
        ChatMessage::user(question),
    ])
}

/// Asks for one sentence to be annotated again.
///
/// `dead_ends` holds relationship labels; they are listed quoted. The id
/// hint continues from the largest id in the conversation.
pub fn build_correction(
    history: &[ChatMessage],
    sentence: &str,
    orphan_ids: &[EntityId],
    dead_ends: &[String],
) -> Result<Vec<ChatMessage>, PromptError> {
    if orphan_ids.is_empty() && dead_ends.is_empty() {
        return Err(PromptError::NothingToCorrect);
    }
    if sentence.trim().is_empty() {
        return Err(PromptError::EmptySentence);
    }
    let last = history.iter().rev().find(|m| m.role == Role::Assistant);
    if !last.is_some_and(|m| m.content.contains(sentence)) {
        return Err(PromptError::SentenceNotInHistory);
    }
    let orphans = orphan_ids.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ");
    let relations = dead_ends.iter().map(|l| format!("\"{l}\"")).collect::<Vec<_>>().join(", ");
    let (last_id, next_id) = id_hint(history_max_id(history).map(EntityId::next));
    let content = render(
        PromptKind::SelfCorrection.template(),
        &[
            ("sentence", sentence),
            ("orphans", &orphans),
            ("dead_ends", &relations),
            ("last_id", &last_id),
            ("next_id", &next_id),
        ],
    )?;
    Ok(with_message(history, ChatMessage::system(content)))
}

fn check_paragraph(paragraph: &str) -> Result<(), PromptError> {
    let unclosed = parse_all(paragraph).iter().any(|e| {
        matches!(e, ParseEvent::Malformed { reason: MalformedReason::Unclosed, .. })
    });
    if paragraph.trim().is_empty() || unclosed {
        return Err(PromptError::IncompleteParagraph);
    }
    Ok(())
}

pub fn build_summary(paragraph: &str) -> Result<Vec<ChatMessage>, PromptError> {
    check_paragraph(paragraph)?;
    Ok(vec![ChatMessage::system(PromptKind::Summary.template()), ChatMessage::user(paragraph)])
}

pub fn build_outline(paragraph: &str) -> Result<Vec<ChatMessage>, PromptError> {
    check_paragraph(paragraph)?;
    Ok(vec![ChatMessage::system(PromptKind::Outline.template()), ChatMessage::user(paragraph)])
}

/// Explanation or examples request for a node mentioned in `sentence`.
pub fn build_node_followup(
    kind: PromptKind,
    history: &[ChatMessage],
    sentence: &str,
    label: &str,
    next_id: EntityId,
) -> Result<Vec<ChatMessage>, PromptError> {
    if !matches!(kind, PromptKind::NodeExplain | PromptKind::NodeExamples) {
        return Err(PromptError::WrongKind(kind));
    }
    if label.is_empty() || !sentence.contains(label) {
        return Err(PromptError::LabelNotInSentence(label.to_string()));
    }
    let (last_id, next) = id_hint(Some(next_id));
    let content = render(
        kind.template(),
        &[("sentence", sentence), ("label", label), ("last_id", &last_id), ("next_id", &next)],
    )?;
    Ok(with_message(history, ChatMessage::user(content)))
}

/// Continuation request: more sentences for one paragraph, or a new one.
pub fn build_expand(
    kind: PromptKind,
    history: &[ChatMessage],
    paragraph: Option<&str>,
) -> Result<Vec<ChatMessage>, PromptError> {
    let (last_id, next_id) = id_hint(history_max_id(history).map(EntityId::next));
    let content = match kind {
        PromptKind::TellMeMore => {
            let paragraph = paragraph.filter(|p| !p.trim().is_empty()).ok_or(PromptError::MissingParagraph)?;
            render(
                kind.template(),
                &[("paragraph", paragraph), ("last_id", &last_id), ("next_id", &next_id)],
            )?
        }
        PromptKind::AddParagraph => render(kind.template(), &[("last_id", &last_id), ("next_id", &next_id)])?,
        other => return Err(PromptError::WrongKind(other)),
    };
    Ok(with_message(history, ChatMessage::user(content)))
}
