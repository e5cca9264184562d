//! Commands that drive live sessions.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use futures::StreamExt;
use graphologue_server::{event_stream, ServerConfig};
use graphologue_session::{golden_lines, EventLog, Op, Payload, Session, SessionSnapshot};
use graphologue_transport::{Chunking, Fixture, Transport, TransportConfig};

use crate::{print_json, Failure};

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Runtime::new().expect("tokio runtime")
}

/// Transport failures; distinct from the documented input errors.
fn transport_failure(message: impl std::fmt::Display) -> Failure {
    Failure { code: 5, message: message.to_string() }
}

pub fn replay(
    path: &Path,
    golden: Option<&Path>,
    write_golden: bool,
    chunking: Chunking,
    question: Option<String>,
    json: bool,
) -> Result<u8, Failure> {
    let fixture = Fixture::load(path).map_err(|e| Failure::unreadable(path, e))?;
    let question = question
        .or_else(|| fixture.question.clone())
        .ok_or_else(|| Failure::contract("the fixture records no question; pass --question"))?;
    let log = runtime().block_on(async {
        let transport = Arc::new(Transport::from_fixture(fixture, chunking));
        let session = Session::spawn("replay", transport, Arc::new(EventLog::new()));
        // A failed ask is part of the log being compared.
        let _ = session.run(Op::Ask(question), None).await;
        session.settled().await;
        session.log().all()
    });
    let lines = golden_lines(&log);
    let text = lines.join("\n") + "\n";

    let Some(golden) = golden else {
        print!("{text}");
        return Ok(0);
    };
    if write_golden {
        std::fs::write(golden, &text).map_err(|e| Failure::contract(format!("cannot write {}: {e}", golden.display())))?;
        report(json, true, lines.len(), None);
        return Ok(0);
    }
    let expected = std::fs::read_to_string(golden).map_err(|e| Failure::unreadable(golden, e))?;
    let expected: Vec<&str> = expected.lines().collect();
    let first_diff = (0..lines.len().max(expected.len())).find(|&i| lines.get(i).map(String::as_str) != expected.get(i).copied());
    match first_diff {
        None => {
            report(json, true, lines.len(), None);
            Ok(0)
        }
        Some(i) => {
            let got = lines.get(i).map_or("<end of log>", String::as_str);
            let want = expected.get(i).copied().unwrap_or("<end of log>");
            report(json, false, lines.len(), Some((i + 1, want, got)));
            eprintln!("graphologue: log differs from {} at line {}", golden.display(), i + 1);
            Ok(1)
        }
    }
}

fn report(json: bool, ok: bool, lines: usize, diff: Option<(usize, &str, &str)>) {
    if json {
        let diff = diff.map(|(line, expected, actual)| serde_json::json!({ "line": line, "expected": expected, "actual": actual }));
        print_json(&serde_json::json!({ "match": ok, "lines": lines, "first_difference": diff }));
    } else if let Some((line, want, got)) = diff {
        println!("mismatch at line {line}\n  expected: {want}\n  actual:   {got}");
    } else {
        println!("ok: {lines} lines");
    }
}

pub fn ask(config: TransportConfig, question: &str, json: bool) -> Result<u8, Failure> {
    let transport = Transport::new(config).map_err(transport_failure)?;
    runtime().block_on(async {
        let session = Session::spawn("cli", Arc::new(transport), Arc::new(EventLog::new()));
        let mut events = Box::pin(event_stream(session.log().clone(), 0, true));
        let started = session.run(Op::Ask(question.to_string()), None).await;
        let mut out = std::io::stdout();
        let mut shown = 0;
        if started.is_ok() {
            let settled = session.settled();
            tokio::pin!(settled);
            loop {
                tokio::select! {
                    Some(e) = events.next() => {
                        shown = e.seq;
                        if let (false, Payload::Token { text, .. }) = (json, &e.payload) {
                            let _ = write!(out, "{text}");
                            let _ = out.flush();
                        }
                    }
                    _ = &mut settled => break,
                }
            }
        }
        for e in session.log().since(shown) {
            if let (false, Payload::Token { text, .. }) = (json, &e.payload) {
                print!("{text}");
            }
        }
        let snapshot = session.read(|s| s.snapshot()).await;
        if json {
            print_json(&snapshot);
        } else {
            summarize(&snapshot);
        }
        started.map(|_| 0).map_err(transport_failure)
    })
}

fn summarize(snapshot: &SessionSnapshot) {
    println!();
    for p in &snapshot.paragraphs {
        let hard = p.diagnostics.iter().filter(|d| d.is_hard()).count();
        println!("paragraph {}: {:?}, {hard} detectable error(s) left", p.index, p.status);
    }
}

pub fn serve(config: ServerConfig, addr: &str) -> Result<u8, Failure> {
    runtime().block_on(async {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| Failure::contract(format!("cannot bind {addr}: {e}")))?;
        eprintln!("listening on http://{}", listener.local_addr().map_err(|e| Failure::contract(e.to_string()))?);
        graphologue_server::serve(config, listener).await.map_err(|e| Failure::contract(e.to_string()))?;
        Ok(0)
    })
}
