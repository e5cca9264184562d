//! Fault planting.
//!
//! [`plant_faults`] breaks a valid document so orphans and dead-ends appear;
//! the expected findings are read back with the document oracles.
//! [`plant_eval_faults`] derives a predicted document from a gold one and
//! keeps a ledger of the error kinds and counts a scorer must report.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::generate::push_text;
use crate::{Document, Pair, Piece};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Fault {
    /// Every mention of the id unwrapped to plain text.
    DeleteEntity { id: u32 },
    UnwrapRelation { paragraph: usize, label: String },
    RetargetPair { paragraph: usize, label: String, from: u32, to: u32 },
    /// A plain word wrapped as a new, unrelated entity.
    WrapWord { paragraph: usize, word: String, id: u32 },
}

/// Applies `count` random faults to a copy of `doc`.
pub fn plant_faults(doc: &Document, seed: u64, count: usize) -> (Document, Vec<Fault>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut doc = doc.clone();
    let mut next = doc.max_id() + 1;
    let mut faults = Vec::new();
    let mut attempts = 0;
    while faults.len() < count && attempts < count * 20 {
        attempts += 1;
        let fault = match rng.gen_range(0..4) {
            0 => delete_entity(&mut doc, &mut rng),
            1 => unwrap_relation(&mut doc, &mut rng),
            2 => retarget(&mut doc, &mut rng, &mut next),
            _ => wrap_word(&mut doc, &mut rng, &mut next),
        };
        faults.extend(fault);
    }
    for p in &mut doc.paragraphs {
        merge_text(&mut p.pieces);
    }
    (doc, faults)
}

fn positions(doc: &Document, want: impl Fn(&Piece) -> bool) -> Vec<(usize, usize)> {
    doc.paragraphs
        .iter()
        .enumerate()
        .flat_map(|(k, p)| p.pieces.iter().enumerate().filter(|(_, x)| want(x)).map(move |(i, _)| (k, i)))
        .collect()
}

fn delete_entity(doc: &mut Document, rng: &mut ChaCha8Rng) -> Option<Fault> {
    let ids: Vec<u32> = doc.mentioned().into_iter().collect();
    let id = *ids.choose(rng)?;
    for p in &mut doc.paragraphs {
        for piece in &mut p.pieces {
            if let Piece::Entity { id: x, label } = piece {
                if *x == id {
                    *piece = Piece::Text(std::mem::take(label));
                }
            }
        }
    }
    Some(Fault::DeleteEntity { id })
}

fn unwrap_relation(doc: &mut Document, rng: &mut ChaCha8Rng) -> Option<Fault> {
    let (k, i) = *positions(doc, |p| matches!(p, Piece::Relation { .. })).choose(rng)?;
    let piece = &mut doc.paragraphs[k].pieces[i];
    let label = piece.clean().to_string();
    *piece = Piece::Text(label.clone());
    Some(Fault::UnwrapRelation { paragraph: k, label })
}

fn retarget(doc: &mut Document, rng: &mut ChaCha8Rng, next: &mut u32) -> Option<Fault> {
    let (k, i) = *positions(doc, |p| matches!(p, Piece::Relation { .. })).choose(rng)?;
    let Piece::Relation { label, pairs } = &mut doc.paragraphs[k].pieces[i] else { unreachable!() };
    let pair = pairs.choose_mut(rng)?;
    let from = pair.target;
    pair.target = *next;
    *next += 1;
    Some(Fault::RetargetPair { paragraph: k, label: label.clone(), from, to: pair.target })
}

/// Byte ranges of alphabetic words of at least three letters.
fn words(text: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices().chain(std::iter::once((text.len(), ' '))) {
        match (c.is_ascii_alphabetic(), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                if i - s >= 3 {
                    out.push((s, i));
                }
                start = None;
            }
            _ => {}
        }
    }
    out
}

fn wrap_word(doc: &mut Document, rng: &mut ChaCha8Rng, next: &mut u32) -> Option<Fault> {
    let spots: Vec<(usize, usize, (usize, usize))> = positions(doc, |p| matches!(p, Piece::Text(_)))
        .into_iter()
        .flat_map(|(k, i)| words(doc.paragraphs[k].pieces[i].clean()).into_iter().map(move |w| (k, i, w)))
        .collect();
    let (k, i, (s, e)) = *spots.choose(rng)?;
    let id = *next;
    *next += 1;
    let word = split_text(&mut doc.paragraphs[k].pieces, i, s, e, id);
    Some(Fault::WrapWord { paragraph: k, word, id })
}

/// Replaces `text[s..e]` of the text piece at `i` by an entity mention.
fn split_text(pieces: &mut Vec<Piece>, i: usize, s: usize, e: usize, id: u32) -> String {
    let Piece::Text(text) = &pieces[i] else { unreachable!("not a text piece") };
    let (head, word, tail) = (text[..s].to_string(), text[s..e].to_string(), text[e..].to_string());
    let mut replacement = Vec::new();
    push_text(&mut replacement, &head);
    replacement.push(Piece::Entity { id, label: word.clone() });
    push_text(&mut replacement, &tail);
    pieces.splice(i..=i, replacement);
    word
}

fn merge_text(pieces: &mut Vec<Piece>) {
    let mut out: Vec<Piece> = Vec::with_capacity(pieces.len());
    for p in pieces.drain(..) {
        match p {
            Piece::Text(t) => push_text(&mut out, &t),
            other => out.push(other),
        }
    }
    *pieces = out;
}

/// Error kinds a gold comparison is expected to report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EvalFault {
    MissingEntityPhrase,
    IncorrectEntity,
    IncompleteEntity,
    IncorrectCoreference,
    MissingRelationship,
    IncompleteRelationship,
    ReversedRelationship,
    MisattributedRelationship,
    DeadEndRelationship,
}

impl EvalFault {
    pub const ALL: [EvalFault; 9] = [
        EvalFault::MissingEntityPhrase,
        EvalFault::IncorrectEntity,
        EvalFault::IncompleteEntity,
        EvalFault::IncorrectCoreference,
        EvalFault::MissingRelationship,
        EvalFault::IncompleteRelationship,
        EvalFault::ReversedRelationship,
        EvalFault::MisattributedRelationship,
        EvalFault::DeadEndRelationship,
    ];

    /// Kebab-case name, as used in evaluation reports.
    pub fn name(self) -> &'static str {
        match self {
            EvalFault::MissingEntityPhrase => "missing-entity-phrase",
            EvalFault::IncorrectEntity => "incorrect-entity",
            EvalFault::IncompleteEntity => "incomplete-entity",
            EvalFault::IncorrectCoreference => "incorrect-coreference",
            EvalFault::MissingRelationship => "missing-relationship",
            EvalFault::IncompleteRelationship => "incomplete-relationship",
            EvalFault::ReversedRelationship => "reversed-relationship",
            EvalFault::MisattributedRelationship => "misattributed-relationship",
            EvalFault::DeadEndRelationship => "dead-end-relationship",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Tally {
    pub total: usize,
    pub extracted: usize,
    pub correct: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EvalLedger {
    /// One entry per expected error, so unwrapping a two-pair relationship
    /// records two missing relationships.
    pub faults: Vec<EvalFault>,
    pub entities: Tally,
    pub relationships: Tally,
}

impl EvalLedger {
    pub fn counts(&self) -> BTreeMap<EvalFault, usize> {
        let mut out = BTreeMap::new();
        for f in &self.faults {
            *out.entry(*f).or_insert(0) += 1;
        }
        out
    }

    fn record(&mut self, fault: EvalFault, times: usize) {
        use EvalFault::*;
        for _ in 0..times {
            self.faults.push(fault);
            let (e, r) = (&mut self.entities, &mut self.relationships);
            match fault {
                MissingEntityPhrase => (e.correct, e.extracted) = (e.correct - 1, e.extracted - 1),
                IncorrectEntity | IncompleteEntity => e.extracted += 1,
                IncorrectCoreference => (e.correct, e.total) = (e.correct - 1, e.total - 1),
                MissingRelationship => (r.correct, r.extracted) = (r.correct - 1, r.extracted - 1),
                IncompleteRelationship | ReversedRelationship | MisattributedRelationship | DeadEndRelationship => {
                    (r.correct, r.total) = (r.correct - 1, r.total - 1)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Edit {
    DeleteMention,
    SplitMention,
    Recoreference,
    WrapWord(usize, usize),
    Unwrap,
    Shorten,
    Reverse(usize),
    Misattribute(usize, u32),
    Retarget(usize),
}

struct Candidate {
    at: (usize, usize),
    /// Entity id the edit claims, if any.
    claims: Option<u32>,
    edit: Edit,
}

fn pair_set(pairs: &[Pair]) -> BTreeSet<(u32, u32)> {
    pairs.iter().map(|p| (p.source, p.target)).collect()
}

/// Derives a predicted document from `gold` with up to `count` edits.
///
/// Edits are chosen so their effects do not interfere: at most one edit per
/// piece, at most one entity edit per id, and the first mention of every id
/// is never moved or renumbered.
pub fn plant_eval_faults(gold: &Document, seed: u64, count: usize) -> (Document, EvalLedger) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mentioned: Vec<u32> = gold.mentioned().into_iter().collect();
    let mut seen = BTreeSet::new();
    let mut candidates = Vec::new();
    for (k, p) in gold.paragraphs.iter().enumerate() {
        for (i, piece) in p.pieces.iter().enumerate() {
            let at = (k, i);
            match piece {
                Piece::Entity { id, label } => {
                    if !seen.insert(*id) {
                        candidates.push(Candidate { at, claims: Some(*id), edit: Edit::DeleteMention });
                        candidates.push(Candidate { at, claims: Some(*id), edit: Edit::Recoreference });
                    }
                    if label.contains(' ') {
                        candidates.push(Candidate { at, claims: Some(*id), edit: Edit::SplitMention });
                    }
                }
                Piece::Text(t) => {
                    for (s, e) in words(t) {
                        candidates.push(Candidate { at, claims: None, edit: Edit::WrapWord(s, e) });
                    }
                }
                Piece::Relation { label, pairs } => {
                    candidates.push(Candidate { at, claims: None, edit: Edit::Unwrap });
                    if label.contains(' ') {
                        candidates.push(Candidate { at, claims: None, edit: Edit::Shorten });
                    }
                    let set = pair_set(pairs);
                    for (j, q) in pairs.iter().enumerate() {
                        if q.source != q.target && !set.contains(&(q.target, q.source)) {
                            candidates.push(Candidate { at, claims: None, edit: Edit::Reverse(j) });
                        }
                        let others: Vec<u32> = mentioned
                            .iter()
                            .copied()
                            .filter(|y| {
                                *y != q.source
                                    && *y != q.target
                                    && !set.contains(&(q.source, *y))
                                    && !set.contains(&(*y, q.source))
                            })
                            .collect();
                        if let Some(y) = others.choose(&mut rng) {
                            candidates.push(Candidate { at, claims: None, edit: Edit::Misattribute(j, *y) });
                        }
                        candidates.push(Candidate { at, claims: None, edit: Edit::Retarget(j) });
                    }
                }
            }
        }
    }
    candidates.shuffle(&mut rng);

    let mut used_pieces = BTreeSet::new();
    let mut used_ids = BTreeSet::new();
    let mut chosen = Vec::new();
    for c in candidates {
        if chosen.len() == count {
            break;
        }
        if used_pieces.contains(&c.at) || c.claims.is_some_and(|id| used_ids.contains(&id)) {
            continue;
        }
        used_pieces.insert(c.at);
        used_ids.extend(c.claims);
        chosen.push(c);
    }
    chosen.sort_by_key(|c| std::cmp::Reverse(c.at));

    let (entities, relationships) = (gold.mention_count(), gold.pair_count());
    let mut ledger = EvalLedger {
        faults: Vec::new(),
        entities: Tally { total: entities, extracted: entities, correct: entities },
        relationships: Tally { total: relationships, extracted: relationships, correct: relationships },
    };
    let mut doc = gold.clone();
    let mut next = gold.max_id() + 1;
    let mut fresh = || {
        next += 1;
        next - 1
    };
    for c in chosen {
        let (k, i) = c.at;
        let pieces = &mut doc.paragraphs[k].pieces;
        match (c.edit, pieces[i].clone()) {
            (Edit::DeleteMention, piece) => {
                pieces[i] = Piece::Text(piece.clean().to_string());
                ledger.record(EvalFault::MissingEntityPhrase, 1);
            }
            (Edit::Recoreference, Piece::Entity { label, .. }) => {
                pieces[i] = Piece::Entity { id: fresh(), label };
                ledger.record(EvalFault::IncorrectCoreference, 1);
            }
            (Edit::SplitMention, Piece::Entity { id, label }) => {
                let (head, tail) = label.split_once(' ').expect("multiword label");
                let replacement = vec![
                    Piece::Entity { id, label: head.to_string() },
                    Piece::Text(" ".into()),
                    Piece::Entity { id: fresh(), label: tail.to_string() },
                ];
                pieces.splice(i..=i, replacement);
                ledger.record(EvalFault::IncompleteEntity, 1);
            }
            (Edit::WrapWord(s, e), Piece::Text(_)) => {
                split_text(pieces, i, s, e, fresh());
                ledger.record(EvalFault::IncorrectEntity, 1);
            }
            (Edit::Unwrap, Piece::Relation { label, pairs }) => {
                pieces[i] = Piece::Text(label);
                ledger.record(EvalFault::MissingRelationship, pairs.len());
            }
            (Edit::Shorten, Piece::Relation { label, pairs }) => {
                let (head, tail) = label.split_once(' ').expect("multiword label");
                let n = pairs.len();
                pieces.splice(i..=i, [Piece::Relation { label: head.to_string(), pairs }, Piece::Text(format!(" {tail}"))]);
                ledger.record(EvalFault::IncompleteRelationship, n);
            }
            (Edit::Reverse(j), Piece::Relation { label, mut pairs }) => {
                let q = &mut pairs[j];
                (q.source, q.target) = (q.target, q.source);
                pieces[i] = Piece::Relation { label, pairs };
                ledger.record(EvalFault::ReversedRelationship, 1);
            }
            (Edit::Misattribute(j, y), Piece::Relation { label, mut pairs }) => {
                pairs[j].target = y;
                pieces[i] = Piece::Relation { label, pairs };
                ledger.record(EvalFault::MisattributedRelationship, 1);
            }
            (Edit::Retarget(j), Piece::Relation { label, mut pairs }) => {
                pairs[j].target = fresh();
                pieces[i] = Piece::Relation { label, pairs };
                ledger.record(EvalFault::DeadEndRelationship, 1);
            }
            (edit, piece) => unreachable!("{edit:?} does not apply to {piece:?}"),
        }
    }
    for p in &mut doc.paragraphs {
        merge_text(&mut p.pieces);
    }
    (doc, ledger)
}
