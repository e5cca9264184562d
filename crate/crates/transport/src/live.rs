//! OpenAI-compatible streaming chat completions.

use std::time::Duration;

use futures::StreamExt;
use graphologue_core::prompts::ChatMessage;
use serde::Serialize;
use serde_json::Value;

use crate::TransportError;

#[derive(Debug, Serialize)]
pub struct RequestBody<'a> {
    pub model: &'a str,
    pub messages: &'a [ChatMessage],
    pub stream: bool,
    pub temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

pub fn url(endpoint: &str) -> String {
    format!("{}/chat/completions", endpoint.trim_end_matches('/'))
}

/// Delta payload of one server-sent event line, if any.
#[derive(Debug, PartialEq, Eq)]
pub enum Frame {
    Delta(String),
    Done,
    Skip,
    Error(String),
}

pub fn parse_line(line: &str) -> Frame {
    let Some(data) = line.strip_prefix("data:") else {
        return Frame::Skip;
    };
    let data = data.trim();
    if data == "[DONE]" {
        return Frame::Done;
    }
    let Ok(v) = serde_json::from_str::<Value>(data) else {
        return Frame::Skip;
    };
    if let Some(e) = v.get("error") {
        return Frame::Error(e.get("message").and_then(Value::as_str).unwrap_or("error").to_string());
    }
    match v.pointer("/choices/0/delta/content").and_then(Value::as_str) {
        Some(s) if !s.is_empty() => Frame::Delta(s.to_string()),
        _ => Frame::Skip,
    }
}

fn retryable(status: reqwest::StatusCode) -> bool {
    status == reqwest::StatusCode::TOO_MANY_REQUESTS || status.is_server_error()
}

/// Sends the request, retrying once after a short pause on connection
/// failures, 429 and 5xx.
pub async fn open<B: Serialize>(
    client: &reqwest::Client,
    endpoint: &str,
    key: &str,
    body: &B,
    backoff: Duration,
) -> Result<reqwest::Response, TransportError> {
    let mut last = None;
    for attempt in 0..2 {
        if attempt > 0 {
            tokio::time::sleep(backoff).await;
        }
        let sent = client.post(url(endpoint)).bearer_auth(key).json(body).send().await;
        match sent {
            Ok(resp) if resp.status().is_success() => return Ok(resp),
            Ok(resp) => {
                let status = resp.status();
                let detail = resp.text().await.unwrap_or_default();
                let err = TransportError::Status { endpoint: endpoint.to_string(), status: status.as_u16(), detail };
                if !retryable(status) {
                    return Err(err);
                }
                last = Some(err);
            }
            Err(e) => last = Some(TransportError::Network { endpoint: endpoint.to_string(), reason: e.to_string() }),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Splits a byte stream of server-sent events into frames.
pub struct Lines<S> {
    inner: S,
    buffer: Vec<u8>,
}

impl<S, B, E> Lines<S>
where
    S: futures::Stream<Item = Result<B, E>> + Unpin,
    B: AsRef<[u8]>,
    E: std::fmt::Display,
{
    pub fn new(inner: S) -> Self {
        Self { inner, buffer: Vec::new() }
    }

    /// Next complete line, or `None` at end of stream.
    pub async fn next_line(&mut self) -> Option<Result<String, String>> {
        loop {
            if let Some(pos) = self.buffer.iter().position(|b| *b == b'\n') {
                let mut line: Vec<u8> = self.buffer.drain(..=pos).collect();
                line.pop();
                if line.last() == Some(&b'\r') {
                    line.pop();
                }
                return Some(Ok(String::from_utf8_lossy(&line).into_owned()));
            }
            match self.inner.next().await {
                Some(Ok(bytes)) => self.buffer.extend_from_slice(bytes.as_ref()),
                Some(Err(e)) => return Some(Err(e.to_string())),
                None if self.buffer.is_empty() => return None,
                None => {
                    let rest = std::mem::take(&mut self.buffer);
                    return Some(Ok(String::from_utf8_lossy(&rest).into_owned()));
                }
            }
        }
    }
}
