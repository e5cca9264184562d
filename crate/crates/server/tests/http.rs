use std::path::{Path, PathBuf};
use std::time::Duration;

use futures::StreamExt;
use graphologue_server::{serve, ServerConfig};
use graphologue_session::WireEvent;
use graphologue_transport::TransportConfig;
use serde_json::{json, Value};

const FAULTY_Q: &str = "How do earthquakes happen?";

fn session_fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../session/fixtures")
}

async fn start(fixture_dir: &Path) -> String {
    let mut config = ServerConfig::new(TransportConfig::replay(fixture_dir.join("default.ndjson")));
    config.fixture_dir = Some(fixture_dir.to_path_buf());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(serve(config, listener));
    format!("http://{addr}")
}

async fn create(base: &str, question: &str) -> (reqwest::StatusCode, Value) {
    let res = reqwest::Client::new()
        .post(format!("{base}/sessions"))
        .json(&json!({ "question": question }))
        .send()
        .await
        .unwrap();
    (res.status(), res.json().await.unwrap())
}

async fn settle(base: &str, id: &str) -> Value {
    for _ in 0..500 {
        let snap: Value = reqwest::get(format!("{base}/sessions/{id}")).await.unwrap().json().await.unwrap();
        if snap["active_stream"].is_null() && snap["pending_tasks"] == 0 {
            return snap;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("session {id} never settled");
}

/// Parses a complete SSE body into (id, event).
fn parse_sse(body: &str) -> Vec<(u64, WireEvent)> {
    let mut out = Vec::new();
    for block in body.split("\n\n") {
        let mut id = None;
        let mut data = String::new();
        for line in block.lines() {
            if let Some(v) = line.strip_prefix("id:") {
                id = Some(v.trim().parse().unwrap());
            } else if let Some(v) = line.strip_prefix("data:") {
                data.push_str(v.strip_prefix(' ').unwrap_or(v));
            }
        }
        if let Some(id) = id {
            out.push((id, serde_json::from_str(&data).unwrap()));
        }
    }
    out
}

async fn events(base: &str, id: &str, query: &str, last_event_id: Option<u64>) -> Vec<WireEvent> {
    let mut req = reqwest::Client::new().get(format!("{base}/sessions/{id}/events?follow=false{query}"));
    if let Some(l) = last_event_id {
        req = req.header("Last-Event-ID", l.to_string());
    }
    let body = req.send().await.unwrap().text().await.unwrap();
    parse_sse(&body)
        .into_iter()
        .map(|(sid, e)| {
            assert_eq!(sid, e.seq);
            e
        })
        .collect()
}

async fn post(base: &str, path: &str) -> (reqwest::StatusCode, Value) {
    let res = reqwest::Client::new().post(format!("{base}{path}")).send().await.unwrap();
    (res.status(), res.json().await.unwrap())
}

#[tokio::test]
async fn resume_from_every_seq_loses_and_repeats_nothing() {
    let base = start(&session_fixtures()).await;
    let (status, body) = create(&base, FAULTY_Q).await;
    assert_eq!(status, 201);
    let id = body["session_id"].as_str().unwrap().to_owned();
    let snap = settle(&base, &id).await;

    let full = events(&base, &id, "", None).await;
    assert_eq!(full.len() as u64, snap["last_seq"].as_u64().unwrap());
    assert!(full.iter().enumerate().all(|(i, e)| e.seq == i as u64 + 1));
    for s in 0..=full.len() {
        let resumed = events(&base, &id, &format!("&from={s}"), None).await;
        assert_eq!(resumed, full[s..], "from={s}");
    }
    for s in [0, 1, full.len() / 2, full.len()] {
        let resumed = events(&base, &id, "", Some(s as u64)).await;
        assert_eq!(resumed, full[s..], "Last-Event-ID={s}");
    }
}

#[tokio::test]
async fn live_subscriber_sees_the_final_log() {
    let base = start(&session_fixtures()).await;
    let (_, body) = create(&base, FAULTY_Q).await;
    let id = body["session_id"].as_str().unwrap().to_owned();

    let res = reqwest::get(format!("{base}/sessions/{id}/events?from=0")).await.unwrap();
    let mut bytes = res.bytes_stream();
    let snap = settle(&base, &id).await;
    let last = snap["last_seq"].as_u64().unwrap();

    let mut buf = String::new();
    let live = loop {
        let chunk = tokio::time::timeout(Duration::from_secs(5), bytes.next()).await.unwrap().unwrap().unwrap();
        buf.push_str(std::str::from_utf8(&chunk).unwrap());
        let done = buf.rfind("\n\n").map(|end| parse_sse(&buf[..end + 2])).unwrap_or_default();
        if done.last().is_some_and(|(s, _)| *s == last) {
            break done.into_iter().map(|(_, e)| e).collect::<Vec<_>>();
        }
    };
    assert_eq!(live, events(&base, &id, "", None).await);
}

#[tokio::test]
async fn every_gesture_is_acknowledged_on_the_stream() {
    let base = start(&session_fixtures()).await;
    let (_, body) = create(&base, FAULTY_Q).await;
    let id = body["session_id"].as_str().unwrap().to_owned();
    let ask = body["request_id"].as_str().unwrap().to_owned();
    settle(&base, &id).await;

    let mut rids = vec![ask];
    for path in [
        "/nodes/N12/explain",
        "/paragraphs/2/more",
        "/add-paragraph",
        "/nodes/$N4/collapse",
        "/nodes/4/expand",
        "/nodes/N3/merge-into/N2",
        "/nodes/N24/trim",
    ] {
        let (status, body) = post(&base, &format!("/sessions/{id}{path}")).await;
        assert_eq!(status, 202, "{path}: {body}");
        rids.push(body["request_id"].as_str().unwrap().to_owned());
        settle(&base, &id).await;
    }
    let log = events(&base, &id, "", None).await;
    for rid in &rids {
        let acked = log.iter().any(|e| {
            e.request_id.as_deref() == Some(rid) && e.payload.type_name() == "request-complete"
        });
        assert!(acked, "{rid}");
    }
    let snap = settle(&base, &id).await;
    assert_eq!(snap["paragraphs"].as_array().unwrap().len(), 4);
}

#[tokio::test]
async fn errors_map_to_status_codes() {
    let base = start(&session_fixtures()).await;
    let (status, _) = create(&base, "   ").await;
    assert_eq!(status, 400);
    let (status, _) = post(&base, "/sessions/nope/add-paragraph").await;
    assert_eq!(status, 404);
    let res = reqwest::get(format!("{base}/sessions/nope/events")).await.unwrap();
    assert_eq!(res.status(), 404);

    let (_, body) = create(&base, FAULTY_Q).await;
    let id = body["session_id"].as_str().unwrap().to_owned();
    settle(&base, &id).await;
    for (path, code) in [
        ("/nodes/N99/explain", 404),
        ("/nodes/bogus/explain", 404),
        ("/nodes/N1/fly", 404),
        ("/paragraphs/9/more", 404),
        ("/nodes/N1/merge-into/N1", 409),
    ] {
        let (status, body) = post(&base, &format!("/sessions/{id}{path}")).await;
        assert_eq!(status, code, "{path}");
        assert!(body["error"].is_string());
    }
    for query in ["view=split&show=7", "view=merged&show=0,7"] {
        let res = reqwest::get(format!("{base}/sessions/{id}/graph?{query}")).await.unwrap();
        assert_eq!(res.status(), 404, "{query}");
    }
    for query in ["view=sideways", "saliency=some", "show=x", "view=split&show=0,1"] {
        let res = reqwest::get(format!("{base}/sessions/{id}/graph?{query}")).await.unwrap();
        assert_eq!(res.status(), 400, "{query}");
    }
}

#[tokio::test]
async fn transport_failure_is_502_and_logged() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("default.ndjson"), "{\"stream\":\"other\",\"ms\":0,\"text\":\"x\"}\n").unwrap();
    let base = start(dir.path()).await;
    let (status, body) = create(&base, "Anything at all?").await;
    assert_eq!(status, 502);
    let id = body["session_id"].as_str().unwrap();
    let log = events(&base, id, "", None).await;
    assert!(log.iter().any(|e| e.payload.type_name() == "error"));
}

fn paragraph_a_dir() -> tempfile::TempDir {
    let text = std::fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/paper/paragraph_a.txt"),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let line = json!({ "stream": "initial", "ms": 0, "text": text.trim_end() });
    std::fs::write(dir.path().join("default.ndjson"), format!("{line}\n")).unwrap();
    dir
}

#[tokio::test]
async fn paragraph_a_views() {
    let dir = paragraph_a_dir();
    let base = start(dir.path()).await;
    let (status, body) = create(&base, "What is AI?").await;
    assert_eq!(status, 201);
    let id = body["session_id"].as_str().unwrap().to_owned();
    settle(&base, &id).await;

    let get = |q: &'static str| {
        let url = format!("{base}/sessions/{id}/graph?{q}");
        async move { reqwest::get(url).await.unwrap().json::<Value>().await.unwrap() }
    };
    assert_eq!(get("saliency=high").await["edges"].as_array().unwrap().len(), 6);
    assert_eq!(get("saliency=all").await["edges"].as_array().unwrap().len(), 15);
    assert_eq!(get("view=merged&show=0&saliency=all").await, get("view=split&show=0&saliency=all").await);
    assert_eq!(get("view=merged&show=0").await, get("view=split&show=0").await);

    let res = reqwest::get(format!("{base}/sessions/{id}/export?format=dot")).await.unwrap();
    assert_eq!(res.headers()["content-type"], "text/vnd.graphviz");
    assert!(res.text().await.unwrap().starts_with("digraph"));
    let json: Value = reqwest::get(format!("{base}/sessions/{id}/export")).await.unwrap().json().await.unwrap();
    assert!(json.is_object());
}
