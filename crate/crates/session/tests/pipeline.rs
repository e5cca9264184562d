mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use common::{chunkings, fixture, fixture_path, replay, Driver, CLEAN, FAULTY};
use graphologue_core::annotation::{parse_all, EntityId};
use graphologue_core::diagnostics::{detect, DiagnosticKind};
use graphologue_core::graph::{Change, SessionGraph};
use graphologue_core::prompts::Role;
use graphologue_session::{
    golden_lines, ErrorCode, EventLog, Op, ParagraphStatus, Payload, Session, SessionError, WireEvent,
};
use graphologue_transport::{Chunking, Fixture, Transport};

fn id(v: u32) -> EntityId {
    EntityId::new(v).unwrap()
}

fn statuses(events: &[WireEvent]) -> BTreeMap<usize, Vec<ParagraphStatus>> {
    let mut out: BTreeMap<usize, Vec<ParagraphStatus>> = BTreeMap::new();
    for e in events {
        if let Payload::ParagraphStatus { paragraph, status } = e.payload {
            out.entry(paragraph).or_default().push(status);
        }
    }
    out
}

fn hard_faults(kinds: impl IntoIterator<Item = DiagnosticKind>) -> usize {
    kinds
        .into_iter()
        .filter(|k| matches!(k, DiagnosticKind::OrphanNode | DiagnosticKind::DeadEndRelationship))
        .count()
}

#[tokio::test]
async fn clean_replay_completes_three_paragraphs() {
    let session = replay(&fixture(CLEAN), Chunking::Recorded).await;
    let snap = session.read(|s| s.snapshot()).await;
    assert_eq!(snap.paragraphs.len(), 3);
    for p in &snap.paragraphs {
        assert_eq!(p.status, ParagraphStatus::Complete);
        assert!(!p.correction_issued);
        assert!(p.summary.is_some() && p.outline.is_some(), "paragraph {} lacks tasks", p.index);
        assert!(p.failures.is_empty());
    }
    assert_eq!(snap.max_entity_id, Some(id(17)));
    let text = fixture(CLEAN).text("initial").unwrap();
    let doc = session.read(|s| s.document()).await;
    assert_eq!(doc, text);
}

#[tokio::test]
async fn graph_grows_while_tokens_arrive() {
    let session = replay(&fixture(CLEAN), Chunking::Recorded).await;
    let events = session.log().all();
    let first_node = events
        .iter()
        .find(|e| matches!(&e.payload, Payload::GraphDiff(d) if matches!(d.change, Change::NodeAdded { .. })))
        .unwrap()
        .seq;
    let last_token = events.iter().rfind(|e| matches!(e.payload, Payload::Token { .. })).unwrap().seq;
    assert!(first_node < last_token);
    let seqs: Vec<u64> = events.iter().map(|e| e.seq).collect();
    assert_eq!(seqs, (1..=events.len() as u64).collect::<Vec<_>>());
}

#[tokio::test]
async fn diff_log_replays_to_the_session_graph() {
    let session = replay(&fixture(FAULTY), Chunking::Fixed(5)).await;
    let diffs: Vec<_> = session
        .log()
        .all()
        .into_iter()
        .filter_map(|e| match e.payload {
            Payload::GraphDiff(d) => Some(d),
            _ => None,
        })
        .collect();
    assert!(diffs.windows(2).all(|w| w[0].seq < w[1].seq));
    let live = session.read(|s| s.graph().to_json()).await;
    assert_eq!(SessionGraph::replay(&diffs).to_json(), live);
}

#[tokio::test]
async fn question_rules() {
    let transport = Arc::new(Transport::from_fixture(fixture(CLEAN), Chunking::Recorded));
    let session = Session::spawn("s", transport, Arc::new(EventLog::new()));
    let err = session.run(Op::Ask("  ".into()), None).await.unwrap_err();
    assert!(matches!(err, SessionError::BadRequest(_)));
    session.run(Op::Ask("What is an earthquake?".into()), None).await.unwrap();
    let err = session.run(Op::Ask("Again?".into()), None).await.unwrap_err();
    assert!(matches!(err, SessionError::Conflict(_)));
}

#[tokio::test]
async fn correction_loop_reaches_corrected() {
    for chunking in chunkings() {
        let session = replay(&fixture(FAULTY), chunking.clone()).await;
        let events = session.log().all();
        let s = statuses(&events);
        use ParagraphStatus::*;
        assert_eq!(s[&0], [Streaming, Complete, Correcting, Corrected], "{chunking:?}");
        assert_eq!(s[&1], [Streaming, Complete, Correcting, Corrected], "{chunking:?}");
        assert_eq!(s[&2], [Streaming, Complete], "{chunking:?}");

        let before: Vec<_> = events
            .iter()
            .filter_map(|e| match &e.payload {
                Payload::Diagnostic(d) => Some((d.paragraph, d.kind)),
                _ => None,
            })
            .collect();
        assert_eq!(hard_faults(before.iter().filter(|(p, _)| *p == 0).map(|(_, k)| *k)), 1);
        assert_eq!(hard_faults(before.iter().filter(|(p, _)| *p == 1).map(|(_, k)| *k)), 1);

        let snap = session.read(|s| s.snapshot()).await;
        for p in &snap.paragraphs {
            assert_eq!(hard_faults(p.diagnostics.iter().map(|d| d.kind)), 0, "paragraph {}", p.index);
        }
        let doc = session.read(|s| s.document()).await;
        assert!(detect(&parse_all(&doc)).iter().all(|d| !d.is_hard()));
        assert!(doc.contains("[along ($L, $N5, $N6)]"));
        assert!(doc.contains("[the energy released ($N8)]"));
    }
}

#[tokio::test]
async fn correction_diffs_are_animated() {
    let session = replay(&fixture(FAULTY), Chunking::Recorded).await;
    let events = session.log().all();
    let applied = events.iter().position(|e| matches!(e.payload, Payload::CorrectionApplied { .. })).unwrap();
    let first_animated = events
        .iter()
        .position(|e| matches!(&e.payload, Payload::GraphDiff(d) if d.animate))
        .unwrap();
    assert!(first_animated < applied);
    let streaming_end = events.iter().rposition(|e| matches!(e.payload, Payload::Token { .. })).unwrap();
    assert!(first_animated > streaming_end, "corrections commit after the stream");
}

#[tokio::test]
async fn golden_log_is_stable_across_chunkings() {
    let fx = fixture(FAULTY);
    let reference = golden_lines(&replay(&fx, Chunking::Recorded).await.log().all());
    for chunking in chunkings() {
        for _ in 0..3 {
            let got = golden_lines(&replay(&fx, chunking.clone()).await.log().all());
            assert_eq!(got, reference, "{chunking:?}");
        }
    }
    let path = fixture_path(FAULTY).with_extension("golden.ndjson");
    let text = reference.join("\n") + "\n";
    if std::env::var_os("GRAPHOLOGUE_BLESS").is_some() {
        std::fs::write(&path, &text).unwrap();
    }
    assert_eq!(std::fs::read_to_string(&path).unwrap(), text);
}

#[test]
fn task_completion_order_does_not_change_the_golden_log() {
    let run = |reverse: bool, chunking: Chunking| {
        let mut d = Driver::new(fixture(FAULTY), chunking);
        d.ask();
        d.resolve(reverse);
        assert!(d.state.is_settled());
        golden_lines(&d.state.log().all())
    };
    let reference = run(false, Chunking::Recorded);
    assert_eq!(run(true, Chunking::Recorded), reference);
    assert_eq!(run(true, Chunking::Fixed(3)), reference);
}

#[test]
fn one_request_per_faulty_sentence() {
    let mut d = Driver::new(fixture(FAULTY), Chunking::Recorded);
    d.ask();
    let tags: Vec<&str> = d.tasks.iter().map(|(_, t)| t.as_str()).filter(|t| t.starts_with("correction")).collect();
    assert_eq!(tags, ["correction/p0/s1", "correction/p1/s0"]);

    let dead_end = d.request("correction/p1/s0").unwrap();
    let prompt = &dead_end.last().unwrap();
    assert_eq!(prompt.role, Role::System);
    assert!(prompt.content.contains("\"measure\""));
    assert!(prompt.content.contains("[Seismologists ($N7)] [measure ($H, $N7, $N8)] the energy released"));
    let orphan = d.request("correction/p0/s1").unwrap().last().unwrap().content.clone();
    assert!(orphan.contains("$N6"));
    assert!(!orphan.contains("\"measure\""));

    let clean: Vec<&str> = d.tasks.iter().map(|(_, t)| t.as_str()).filter(|t| t.ends_with("p2")).collect();
    assert_eq!(clean, ["summary/p2", "outline/p2"]);
}

#[test]
fn operations_succeed_while_corrections_are_pending() {
    let mut d = Driver::new(fixture(FAULTY), Chunking::Recorded);
    d.ask();
    assert_eq!(d.state.paragraphs()[0].status, ParagraphStatus::Correcting);
    d.state.collapse(id(1), None).unwrap();
    d.state.expand(id(1), None).unwrap();
    d.state.merge(id(16), id(15), None).unwrap();
    d.state.trim(id(17), None).unwrap();
    let effects = d.state.followup(id(12), graphologue_session::FollowupKind::Explain, None).unwrap();
    d.run(effects);
    d.resolve(false);
    assert_eq!(d.state.paragraphs()[0].status, ParagraphStatus::Corrected);
    assert_eq!(d.state.paragraphs()[1].status, ParagraphStatus::Corrected);
    assert!(d.state.paragraphs()[1].raw.contains("[the thin rocky outer layer ($N18)]"));
    assert!(!d.state.paragraphs()[2].raw.contains("$N16"));
    assert!(!d.state.paragraphs()[2].raw.contains("$N17"));
    let json = d.state.graph().to_json();
    let reparsed = {
        let mut g = SessionGraph::new();
        for (k, p) in d.state.paragraphs().iter().enumerate() {
            g.apply_paragraph(&parse_all(&p.raw), k);
        }
        g
    };
    assert_eq!(reparsed.node_count(), d.state.graph().node_count(), "{json}");
    assert_eq!(reparsed.edge_count(), d.state.graph().edge_count());
}

fn with_stream(mut fx: Fixture, tag: &str, text: &str) -> Fixture {
    fx.streams.insert(tag.to_string(), vec![(0, text.to_string())]);
    fx
}

#[test]
fn unparsable_correction_is_rejected() {
    let fx = with_stream(fixture(FAULTY), "correction/p0/s1", "[These plates ($N3");
    let mut d = Driver::new(fx, Chunking::Recorded);
    d.ask();
    d.resolve(false);
    let p0 = &d.state.paragraphs()[0];
    assert_eq!(p0.status, ParagraphStatus::Complete);
    assert_eq!(hard_faults(p0.diagnostics.iter().map(|d| d.kind)), 1);
    assert!(p0.correction_issued);
    let log = d.state.log().all();
    assert!(log.iter().any(|e| matches!(&e.payload, Payload::Error { code: ErrorCode::CorrectionRejected, paragraph: Some(0), .. })));
    assert_eq!(d.state.paragraphs()[1].status, ParagraphStatus::Corrected);
}

#[test]
fn identical_correction_changes_nothing() {
    let fx = fixture(FAULTY);
    let original = "[These plates ($N3)] [float on ($L, $N3, $N4)] [the semi-fluid mantle ($N4)] and [build up ($H, $N3, $N5)] [stress ($N5)] along [faults ($N6)].";
    let mut d = Driver::new(with_stream(fx, "correction/p0/s1", original), Chunking::Recorded);
    d.ask();
    let before = d.state.graph().seq();
    let fix_p1 = d.fixture.text("correction/p1/s0").unwrap();
    d.fixture.streams.remove("correction/p1/s0");
    d.resolve(false);
    // p1 failed to fetch, so only p0's empty diff list was committed.
    assert_eq!(d.state.graph().seq(), before);
    assert_eq!(d.state.paragraphs()[0].status, ParagraphStatus::Corrected);
    assert_eq!(d.state.paragraphs()[0].raw.matches(original).count(), 1);
    assert_eq!(d.state.paragraphs()[1].status, ParagraphStatus::Complete);
    assert!(!fix_p1.is_empty());
}

#[test]
fn colliding_ids_in_corrections_are_remapped() {
    let fix = "[These plates ($N3)] [float on ($L, $N3, $N4)] [the semi-fluid mantle ($N4)] and [build up ($H, $N3, $N5)] [stress ($N5)] [along ($L, $N5, $N6)] [faults ($N6)] and [ridges ($N9)].";
    let mut d = Driver::new(with_stream(fixture(FAULTY), "correction/p0/s1", fix), Chunking::Recorded);
    d.ask();
    d.resolve(false);
    let raw = &d.state.paragraphs()[0].raw;
    assert!(raw.contains("[ridges ($N18)]"), "{raw}");
    let remapped = d.state.log().all().into_iter().any(|e| {
        matches!(&e.payload, Payload::Diagnostic(x) if x.kind == DiagnosticKind::RemappedId && x.ids == [id(9), id(18)])
    });
    assert!(remapped);
    assert_eq!(d.state.graph().node(id(9)).unwrap().label, "the moment magnitude scale");
}

#[tokio::test]
async fn follow_ups_extend_the_session() {
    let session = replay(&fixture(FAULTY), Chunking::Fixed(4)).await;

    let nodes_before = session.read(|s| s.graph().node_count()).await;
    session.run(Op::Followup(id(12), graphologue_session::FollowupKind::Explain), Some("x".into())).await.unwrap();
    session.settled().await;
    let (nodes, max, mentions, p1) = session
        .read(|s| {
            let n = s.graph().node(id(12)).unwrap();
            (s.graph().node_count(), s.max_entity_id(), n.mentions.len(), s.paragraphs()[1].clone())
        })
        .await;
    assert_eq!(nodes, nodes_before + 2);
    assert_eq!(max, Some(id(19)));
    assert_eq!(mentions, 3);
    assert_eq!(p1.status, ParagraphStatus::Corrected);
    assert!(p1.raw.ends_with("[tectonic plates ($N19)]."));
    let branch = session
        .read(|s| s.graph().incident_edges(id(12)).filter(|e| e.pair.source == id(12)).count())
        .await;
    assert_eq!(branch, 2);

    session.run(Op::TellMeMore(2), Some("m".into())).await.unwrap();
    session.settled().await;
    let (max, p2, n22) = session
        .read(|s| (s.max_entity_id(), s.paragraphs()[2].clone(), s.graph().node(id(22)).map(|n| n.label.clone())))
        .await;
    assert_eq!(max, Some(id(22)));
    assert_eq!(p2.status, ParagraphStatus::Complete);
    assert!(p2.summary.is_some());
    assert_eq!(n22.as_deref(), Some("Tsunami warning systems"));
    assert!(p2.raw.contains("[send ($H, $N22, $N20)]"));

    session.run(Op::AddParagraph, Some("a".into())).await.unwrap();
    session.settled().await;
    let snap = session.read(|s| s.snapshot()).await;
    assert_eq!(snap.paragraphs.len(), 4);
    assert_eq!(snap.paragraphs[3].status, ParagraphStatus::Complete);
    assert_eq!(snap.max_entity_id, Some(id(26)));

    for rid in ["x", "m", "a"] {
        let closed = session
            .log()
            .all()
            .into_iter()
            .any(|e| e.request_id.as_deref() == Some(rid) && matches!(e.payload, Payload::RequestComplete { ok: true }));
        assert!(closed, "{rid}");
    }
}

#[tokio::test]
async fn follow_up_targets_are_checked() {
    let session = replay(&fixture(FAULTY), Chunking::Recorded).await;
    let err = session.run(Op::Followup(id(99), graphologue_session::FollowupKind::Examples), None).await;
    assert!(matches!(err, Err(SessionError::NotFound(_))));
    let err = session.run(Op::TellMeMore(9), None).await;
    assert!(matches!(err, Err(SessionError::NotFound(_))));
    let err = session.run(Op::Collapse(id(99)), None).await;
    assert!(matches!(err, Err(SessionError::NotFound(_))));
}

#[test]
fn placeholder_follow_up_is_invalid() {
    let fx = Fixture::parse(
        "{\"question\":\"q\"}\n{\"stream\":\"initial\",\"ms\":0,\"text\":\"[A ($N1)] [needs ($H, $N1, $N2)] more. [C ($N3)] [is ($H, $N3, $N1)] fine.\"}\n",
    )
    .unwrap();
    let mut d = Driver::new(fx, Chunking::Recorded);
    d.ask();
    let err = d.state.followup(id(2), graphologue_session::FollowupKind::Explain, None).unwrap_err();
    assert!(matches!(err, SessionError::InvalidTarget(_)));
}

#[test]
fn tell_me_more_goes_through_correction() {
    let more = "[Aftershocks ($N18)] [follow ($H, $N18, $N1)] [earthquakes ($N1)]. [Tremors ($N19)] are common.";
    let fixed = "[Tremors ($N19)] [are ($L, $N19, $N18)] [aftershocks ($N18)].";
    let mut fx = with_stream(fixture(CLEAN), "more/p2", more);
    fx = with_stream(fx, "correction/p2/s3", fixed);
    let mut d = Driver::new(fx, Chunking::Fixed(2));
    d.ask();
    d.resolve(false);
    let effects = d.state.tell_me_more(2, Some("m".into())).unwrap();
    assert_eq!(d.state.paragraphs()[2].status, ParagraphStatus::Streaming);
    d.run(effects);
    assert_eq!(d.state.paragraphs()[2].status, ParagraphStatus::Correcting);
    let tags: Vec<_> = d.tasks.iter().map(|(_, t)| t.clone()).collect();
    assert!(d.request("correction/p2/s3").is_some(), "{tags:?} {:?}", d.state.paragraphs()[2].diagnostics);
    d.resolve(false);
    let p2 = &d.state.paragraphs()[2];
    assert_eq!(p2.status, ParagraphStatus::Corrected);
    assert!(p2.raw.ends_with(fixed));
    assert_eq!(hard_faults(p2.diagnostics.iter().map(|d| d.kind)), 0);

    // A corrected paragraph never starts a second round.
    let fx2 = with_stream(d.fixture.clone(), "more/p2#2", "[Quakes ($N20)] are loud.");
    d.fixture = fx2;
    let effects = d.state.tell_me_more(2, None).unwrap();
    d.run(effects);
    assert!(d.tasks.iter().all(|(_, t)| !t.starts_with("correction")));
    d.resolve(false);
    assert_eq!(d.state.paragraphs()[2].status, ParagraphStatus::Corrected);
    assert_eq!(hard_faults(d.state.paragraphs()[2].diagnostics.iter().map(|d| d.kind)), 1);
}

#[tokio::test]
async fn transport_failure_surfaces_as_error() {
    let fx = Fixture::parse("{\"question\":\"q\"}\n").unwrap();
    let transport = Arc::new(Transport::from_fixture(fx, Chunking::Recorded));
    let session = Session::spawn("s", transport, Arc::new(EventLog::new()));
    let err = session.run(Op::Ask("q".into()), Some("r".into())).await.unwrap_err();
    assert!(matches!(err, SessionError::Transport(_)));
    session.settled().await;
    let log = session.log().all();
    assert!(log.iter().any(|e| e.request_id.as_deref() == Some("r")
        && matches!(e.payload, Payload::Error { code: ErrorCode::Transport, .. })));
    assert!(matches!(log.last().unwrap().payload, Payload::RequestComplete { ok: false }));
    assert!(session.read(|s| s.snapshot().paragraphs.is_empty()).await);
}

#[test]
fn missing_task_streams_are_recorded_not_fatal() {
    let mut fx = fixture(CLEAN);
    fx.streams.remove("outline/p1");
    let mut d = Driver::new(fx, Chunking::Recorded);
    d.ask();
    d.resolve(false);
    let p1 = &d.state.paragraphs()[1];
    assert!(p1.outline.is_none() && p1.summary.is_some());
    assert_eq!(p1.failures.len(), 1);
    assert!(d.state.paragraphs().iter().all(|p| p.status == ParagraphStatus::Complete));
}
