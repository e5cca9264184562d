mod common;

use graphologue_core::annotation::canonicalize;
use graphologue_core::{
    parse_all, serialize, strip_annotations, Annotation, EntityId, Mark, ParseEvent, RelationPair, Saliency, Span,
};
use proptest::prelude::*;

#[test]
fn strip_then_serialize_reproduces_canonical_text() {
    for (name, text) in common::valid_fixtures() {
        let (clean, annotations) = strip_annotations(&text);
        let rebuilt = serialize(&clean, &annotations).unwrap();
        assert_eq!(rebuilt, canonicalize(&text), "{name}");
        // Only the paper's stray "$" differs from canonical form.
        if name != "paper/paragraph_b" {
            assert_eq!(rebuilt, text, "{name}");
        }
        let (clean2, annotations2) = strip_annotations(&rebuilt);
        assert_eq!(clean2, clean, "{name}");
        assert_eq!(annotations2, annotations, "{name}");
    }
}

#[test]
fn canonical_form_is_a_fixed_point() {
    for (name, text) in common::all_fixtures() {
        let once = canonicalize(&text);
        assert_eq!(canonicalize(&once), once, "{name}");
    }
}

#[derive(Debug, Clone)]
enum Segment {
    Text(String),
    Entity(String, u32),
    Relation(String, Vec<(bool, u32, u32)>),
}

fn label() -> impl Strategy<Value = String> {
    prop_oneof![
        "[A-Za-z][a-z]{0,6}( [a-z]{1,6}){0,2}",
        "[a-z]{2,6} \\([a-z]{2,5}\\)",
        "[a-zé]{1,4}-[a-z]{1,4}",
    ]
}

fn segment() -> impl Strategy<Value = Segment> {
    let id = 1u32..40;
    prop_oneof![
        "[a-z ,.;:]{1,12}".prop_map(Segment::Text),
        "[a-z ]{0,4}\n\n[a-z ]{0,4}".prop_map(Segment::Text),
        (label(), id.clone()).prop_map(|(l, i)| Segment::Entity(l, i)),
        (label(), prop::collection::vec((any::<bool>(), id.clone(), id), 1..4)).prop_map(|(l, p)| Segment::Relation(l, p)),
    ]
}

/// Clean text and annotations for a segment list, separating adjacent
/// mentions with a space.
fn build(segments: &[Segment]) -> (String, Vec<Annotation>) {
    let mut clean = String::new();
    let mut annotations = Vec::new();
    let mut previous_mention = false;
    for s in segments {
        let (text, mark) = match s {
            Segment::Text(t) => (t, None),
            Segment::Entity(l, i) => (l, Some(Mark::Entity(EntityId::new(*i).unwrap()))),
            Segment::Relation(l, pairs) => {
                let pairs = pairs
                    .iter()
                    .map(|(h, a, b)| {
                        let s = if *h { Saliency::High } else { Saliency::Low };
                        RelationPair::new(s, EntityId::new(*a).unwrap(), EntityId::new(*b).unwrap())
                    })
                    .collect();
                (l, Some(Mark::Relation(pairs)))
            }
        };
        if mark.is_some() && previous_mention {
            clean.push(' ');
        }
        previous_mention = mark.is_some();
        let start = clean.len();
        clean.push_str(text);
        if let Some(mark) = mark {
            annotations.push(Annotation { span: Span::new(start, clean.len()), mark });
        }
    }
    (clean, annotations)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 512, ..ProptestConfig::default() })]

    #[test]
    fn parse_inverts_serialize(segments in prop::collection::vec(segment(), 0..12)) {
        let (clean, annotations) = build(&segments);
        let text = serialize(&clean, &annotations).unwrap();
        let (clean2, annotations2) = strip_annotations(&text);
        prop_assert_eq!(&clean2, &clean);
        prop_assert_eq!(&annotations2, &annotations);
        prop_assert_eq!(serialize(&clean2, &annotations2).unwrap(), text.clone());
        let events = parse_all(&text);
        prop_assert!(events.iter().all(|e| !matches!(e, ParseEvent::Malformed { .. })), "{}", text);
    }
}
