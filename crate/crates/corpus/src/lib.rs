//! Seeded generator of annotated responses with planted-fault ledgers.
//!
//! Documents are kept as piece lists so every oracle here works on the
//! model directly and never goes through a parser.

mod generate;
mod mutate;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

pub use generate::{generate, Config};
pub use mutate::{plant_eval_faults, plant_faults, EvalFault, EvalLedger, Fault, Tally};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Pair {
    pub high: bool,
    pub source: u32,
    pub target: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Piece {
    Text(String),
    Entity { id: u32, label: String },
    Relation { label: String, pairs: Vec<Pair> },
}

impl Piece {
    pub fn clean(&self) -> &str {
        match self {
            Piece::Text(t) => t,
            Piece::Entity { label, .. } | Piece::Relation { label, .. } => label,
        }
    }

    fn render_into(&self, out: &mut String) {
        match self {
            Piece::Text(t) => out.push_str(t),
            Piece::Entity { id, label } => {
                let _ = write!(out, "[{label} ($N{id})]");
            }
            Piece::Relation { label, pairs } => {
                let body: Vec<String> = pairs
                    .iter()
                    .map(|p| format!("${}, $N{}, $N{}", if p.high { 'H' } else { 'L' }, p.source, p.target))
                    .collect();
                let _ = write!(out, "[{label} ({})]", body.join("; "));
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Paragraph {
    pub pieces: Vec<Piece>,
}

impl Paragraph {
    pub fn render(&self) -> String {
        let mut out = String::new();
        for p in &self.pieces {
            p.render_into(&mut out);
        }
        out
    }

    pub fn clean(&self) -> String {
        self.pieces.iter().map(Piece::clean).collect()
    }

    pub fn mentioned(&self) -> BTreeSet<u32> {
        self.pieces
            .iter()
            .filter_map(|p| match p {
                Piece::Entity { id, .. } => Some(*id),
                _ => None,
            })
            .collect()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&str, &Pair)> {
        self.pieces.iter().flat_map(|p| match p {
            Piece::Relation { label, pairs } => pairs.iter().map(|q| (label.as_str(), q)).collect(),
            _ => Vec::new(),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Document {
    pub paragraphs: Vec<Paragraph>,
}

impl Document {
    /// Canonical annotated text, paragraphs separated by a blank line.
    pub fn render(&self) -> String {
        self.paragraphs.iter().map(Paragraph::render).collect::<Vec<_>>().join("\n\n")
    }

    pub fn clean(&self) -> String {
        self.paragraphs.iter().map(Paragraph::clean).collect::<Vec<_>>().join("\n\n")
    }

    pub fn mentioned(&self) -> BTreeSet<u32> {
        self.paragraphs.iter().flat_map(Paragraph::mentioned).collect()
    }

    /// Ids taking part in at least one pair anywhere.
    pub fn related(&self) -> BTreeSet<u32> {
        self.paragraphs
            .iter()
            .flat_map(|p| p.pairs().flat_map(|(_, q)| [q.source, q.target]).collect::<Vec<_>>())
            .collect()
    }

    pub fn max_id(&self) -> u32 {
        let pairs = self.paragraphs.iter().flat_map(|p| p.pairs().flat_map(|(_, q)| [q.source, q.target]).collect::<Vec<_>>());
        self.mentioned().into_iter().chain(pairs).max().unwrap_or(0)
    }

    pub fn mention_count(&self) -> usize {
        self.paragraphs
            .iter()
            .flat_map(|p| &p.pieces)
            .filter(|p| matches!(p, Piece::Entity { .. }))
            .count()
    }

    pub fn pair_count(&self) -> usize {
        self.paragraphs.iter().map(|p| p.pairs().count()).sum()
    }

    /// Mentioned ids with no pair anywhere, as (paragraph, id).
    pub fn expected_orphans(&self) -> BTreeSet<(usize, u32)> {
        let related = self.related();
        self.paragraphs
            .iter()
            .enumerate()
            .flat_map(|(k, p)| p.mentioned().into_iter().filter(|id| !related.contains(id)).map(move |id| (k, id)))
            .collect()
    }

    /// Pairs with an endpoint never mentioned, as (paragraph, label, pair)
    /// with multiplicity.
    pub fn expected_dead_ends(&self) -> BTreeMap<(usize, String, u32, u32), usize> {
        let mentioned = self.mentioned();
        let mut out = BTreeMap::new();
        for (k, p) in self.paragraphs.iter().enumerate() {
            for (label, q) in p.pairs() {
                if !mentioned.contains(&q.source) || !mentioned.contains(&q.target) {
                    *out.entry((k, label.to_string(), q.source, q.target)).or_insert(0) += 1;
                }
            }
        }
        out
    }

    /// Whether every mention takes part in a pair and every pair endpoint is
    /// mentioned.
    pub fn is_valid(&self) -> bool {
        self.expected_orphans().is_empty() && self.expected_dead_ends().is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Document {
        Document {
            paragraphs: vec![Paragraph {
                pieces: vec![
                    Piece::Entity { id: 1, label: "Birds".into() },
                    Piece::Text(" ".into()),
                    Piece::Relation {
                        label: "can".into(),
                        pairs: vec![Pair { high: true, source: 1, target: 2 }, Pair { high: false, source: 1, target: 3 }],
                    },
                    Piece::Text(" ".into()),
                    Piece::Entity { id: 2, label: "fly".into() },
                    Piece::Text(".".into()),
                ],
            }],
        }
    }

    #[test]
    fn renders_canonical_markup() {
        let d = sample();
        assert_eq!(d.render(), "[Birds ($N1)] [can ($H, $N1, $N2; $L, $N1, $N3)] [fly ($N2)].");
        assert_eq!(d.clean(), "Birds can fly.");
    }

    #[test]
    fn oracles() {
        let d = sample();
        assert!(d.expected_orphans().is_empty());
        let dead = d.expected_dead_ends();
        assert_eq!(dead.len(), 1);
        assert_eq!(dead[&(0, "can".to_string(), 1, 3)], 1);
        assert_eq!(d.max_id(), 3);
        assert!(!d.is_valid());
    }
}
