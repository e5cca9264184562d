use std::collections::BTreeSet;
use std::ops::RangeInclusive;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Document, Pair, Paragraph, Piece};

const ADJECTIVES: &[&str] = &[
    "coastal", "urban", "ancient", "digital", "solar", "local", "modern", "rural", "public", "early", "global",
    "volcanic", "organic", "northern", "social", "thermal", "deep", "seasonal", "economic", "mineral",
];

const NOUNS: &[&str] = &[
    "forests", "rivers", "markets", "networks", "glaciers", "farmers", "cities", "soils", "storms", "tools",
    "communities", "species", "currents", "habitats", "industries", "policies", "archives", "reefs", "harvests",
    "engines", "wetlands", "schools", "routes", "crops", "climates",
];

/// Relation labels; multiword ones can be shortened by the eval planter.
const RELATIONS: &[&str] = &[
    "shape", "support", "depend on", "lead to", "feed into", "rely on", "affect", "protect", "are part of",
    "result in", "attract", "connect to", "drive", "sustain", "compete with",
];

const FILLERS: &[&str] = &["", " in many cases", " over time", " across several regions", " during most seasons", " for decades"];

#[derive(Debug, Clone)]
pub struct Config {
    pub paragraphs: RangeInclusive<usize>,
    pub sentences: RangeInclusive<usize>,
    /// Chance that a sentence subject or object reuses an earlier id.
    pub reuse: f64,
}

impl Default for Config {
    fn default() -> Self {
        Self { paragraphs: 1..=3, sentences: 2..=4, reuse: 0.3 }
    }
}

/// Builds a valid document: every mentioned id is in a pair and every pair
/// endpoint is mentioned.
pub fn generate(seed: u64, config: &Config) -> Document {
    let mut g = Generator { rng: ChaCha8Rng::seed_from_u64(seed), labels: Vec::new(), used: BTreeSet::new(), reuse: config.reuse };
    let n = g.rng.gen_range(config.paragraphs.clone());
    let paragraphs = (0..n)
        .map(|_| {
            let mut pieces = Vec::new();
            for s in 0..g.rng.gen_range(config.sentences.clone()) {
                if s > 0 {
                    push_text(&mut pieces, " ");
                }
                g.sentence(&mut pieces);
            }
            Paragraph { pieces }
        })
        .collect();
    Document { paragraphs }
}

struct Generator {
    rng: ChaCha8Rng,
    /// Label of id `k + 1`.
    labels: Vec<String>,
    used: BTreeSet<String>,
    reuse: f64,
}

impl Generator {
    fn fresh(&mut self) -> u32 {
        let label = loop {
            let label = if self.rng.gen_bool(0.25) {
                NOUNS.choose(&mut self.rng).unwrap().to_string()
            } else {
                format!("{} {}", ADJECTIVES.choose(&mut self.rng).unwrap(), NOUNS.choose(&mut self.rng).unwrap())
            };
            if self.used.insert(label.clone()) {
                break label;
            }
        };
        self.labels.push(label);
        self.labels.len() as u32
    }

    fn pick(&mut self, avoid: &[u32]) -> u32 {
        if self.rng.gen_bool(self.reuse) {
            let known: Vec<u32> = (1..=self.labels.len() as u32).filter(|id| !avoid.contains(id)).collect();
            if let Some(id) = known.choose(&mut self.rng) {
                return *id;
            }
        }
        self.fresh()
    }

    fn entity(&self, id: u32, capital: bool) -> Piece {
        let label = &self.labels[id as usize - 1];
        let label = if capital { capitalize(label) } else { label.clone() };
        Piece::Entity { id, label }
    }

    fn relation(&mut self, pairs: Vec<(u32, u32)>) -> Piece {
        let label = RELATIONS.choose(&mut self.rng).unwrap().to_string();
        let pairs = pairs.into_iter().map(|(source, target)| Pair { high: self.rng.gen_bool(0.6), source, target }).collect();
        Piece::Relation { label, pairs }
    }

    fn sentence(&mut self, out: &mut Vec<Piece>) {
        let s = self.pick(&[]);
        out.push(self.entity(s, true));
        push_text(out, " ");
        match self.rng.gen_range(0..3) {
            0 => {
                let o = self.pick(&[s]);
                let rel = self.relation(vec![(s, o)]);
                out.push(rel);
                push_text(out, " ");
                out.push(self.entity(o, false));
            }
            1 => {
                let a = self.pick(&[s]);
                let b = self.pick(&[s, a]);
                let rel = self.relation(vec![(s, a), (s, b)]);
                out.push(rel);
                push_text(out, " ");
                out.push(self.entity(a, false));
                push_text(out, " and ");
                out.push(self.entity(b, false));
            }
            _ => {
                let a = self.pick(&[s]);
                let rel = self.relation(vec![(s, a)]);
                out.push(rel);
                push_text(out, " ");
                out.push(self.entity(a, false));
                push_text(out, ", which ");
                let b = self.pick(&[s, a]);
                let rel = self.relation(vec![(a, b)]);
                out.push(rel);
                push_text(out, " ");
                out.push(self.entity(b, false));
            }
        }
        let filler = FILLERS.choose(&mut self.rng).unwrap();
        push_text(out, &format!("{filler}."));
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    chars.next().map(|c| c.to_uppercase().chain(chars).collect()).unwrap_or_default()
}

/// Appends text, merging with a preceding text piece.
pub(crate) fn push_text(pieces: &mut Vec<Piece>, text: &str) {
    if let Some(Piece::Text(t)) = pieces.last_mut() {
        t.push_str(text);
    } else if !text.is_empty() {
        pieces.push(Piece::Text(text.to_string()));
    }
}
