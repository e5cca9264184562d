mod common;

use std::collections::BTreeSet;

use graphologue_core::graph::{SaliencyFilter, ViewScope};
use graphologue_core::{detect, parse_all, ParseEvent, Saliency, SessionGraph};

struct Counts {
    ids: usize,
    mentions: usize,
    relations: usize,
    pairs: usize,
    high: usize,
}

fn count(text: &str) -> Counts {
    let events = parse_all(text);
    let mut ids = BTreeSet::new();
    let mut c = Counts { ids: 0, mentions: 0, relations: 0, pairs: 0, high: 0 };
    for e in &events {
        match e {
            ParseEvent::Entity { id, .. } => {
                ids.insert(*id);
                c.mentions += 1;
            }
            ParseEvent::Relation { pairs, .. } => {
                c.relations += 1;
                c.pairs += pairs.len();
                c.high += pairs.iter().filter(|p| p.saliency == Saliency::High).count();
                ids.extend(pairs.iter().flat_map(|p| [p.source, p.target]));
            }
            _ => {}
        }
    }
    c.ids = ids.len();
    c
}

#[test]
fn paper_paragraph_a() {
    let c = count(&common::fixture("paper/paragraph_a"));
    assert_eq!((c.ids, c.mentions, c.relations, c.pairs), (16, 21, 9, 15));
    assert_eq!((c.high, c.pairs - c.high), (6, 9));
}

#[test]
fn paper_paragraph_b_recovers_irregular_pairs() {
    let text = common::fixture("paper/paragraph_b");
    let c = count(&text);
    assert_eq!((c.ids, c.mentions, c.pairs), (11, 13, 13));
    let working_on = parse_all(&text).into_iter().find_map(|e| match e {
        ParseEvent::Relation { label, pairs, .. } if label == "working on" => Some(pairs),
        _ => None,
    });
    let pairs = working_on.expect("the irregular annotation still parses");
    assert_eq!(pairs.iter().map(|p| (p.saliency, p.source.get(), p.target.get())).collect::<Vec<_>>(), [(Saliency::Low, 1, 7)]);
}

#[test]
fn paper_paragraph_c() {
    let text = common::fixture("paper/paragraph_c");
    let c = count(&text);
    assert_eq!((c.ids, c.pairs, c.high), (9, 9, 8));
    let low: Vec<String> = parse_all(&text)
        .into_iter()
        .filter_map(|e| match e {
            ParseEvent::Relation { label, pairs, .. } if pairs.iter().any(|p| p.saliency == Saliency::Low) => Some(label),
            _ => None,
        })
        .collect();
    assert_eq!(low, ["making"]);
    let g = SessionGraph::from_events(&parse_all(&text));
    let doc = g.to_document();
    assert_eq!((doc.nodes.len(), doc.edges.len()), (9, 9));
}

#[test]
fn paragraph_a_high_only_shows_six_edges() {
    let g = SessionGraph::from_events(&parse_all(&common::fixture("paper/paragraph_a")));
    let all = g.visible_subgraph(SaliencyFilter::All, &ViewScope::Split(0)).unwrap();
    let high = g.visible_subgraph(SaliencyFilter::HighOnly, &ViewScope::Split(0)).unwrap();
    assert_eq!((all.edges.len(), high.edges.len()), (15, 6));
}

#[test]
fn responses_have_no_hard_diagnostics() {
    for (name, text) in common::valid_fixtures().into_iter().filter(|(n, _)| n.starts_with("responses/")) {
        let events = parse_all(&text);
        let hard: Vec<_> = detect(&events).into_iter().filter(|d| d.is_hard()).collect();
        assert!(hard.is_empty(), "{name}: {hard:?}");
        let paragraphs = events.iter().filter(|e| matches!(e, ParseEvent::ParagraphBreak { .. })).count() + 1;
        assert!((1..=3).contains(&paragraphs), "{name} has {paragraphs} paragraphs");
    }
}

#[test]
fn malformed_fixtures_are_flagged() {
    for (name, text) in common::all_fixtures().into_iter().filter(|(n, _)| n.starts_with("malformed/")) {
        assert!(!detect(&parse_all(&text)).is_empty(), "{name}");
    }
}
