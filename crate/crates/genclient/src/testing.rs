//! Scripted in-process OpenAI-compatible server for tests.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::task::JoinHandle;

#[derive(Debug, Clone, PartialEq)]
pub struct StubReply {
    pub status: u16,
    pub body: Value,
    pub delay_ms: u64,
}

impl StubReply {
    pub fn ok(body: Value) -> Self {
        StubReply {
            status: 200,
            body,
            delay_ms: 0,
        }
    }

    pub fn status(status: u16) -> Self {
        StubReply {
            status,
            body: json!({"error": {"message": "scripted failure"}}),
            delay_ms: 0,
        }
    }

    pub fn delayed(mut self, ms: u64) -> Self {
        self.delay_ms = ms;
        self
    }
}

pub fn chat_reply(text: &str) -> Value {
    json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": text}}]})
}

pub fn completion_reply(text: &str) -> Value {
    json!({"choices": [{"index": 0, "text": text}]})
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recorded {
    pub path: String,
    pub body: Value,
    pub authorization: Option<String>,
}

/// `(path, body, n)` where `n` counts earlier identical requests.
pub type Handler = Arc<dyn Fn(&str, &Value, usize) -> StubReply + Send + Sync>;

#[derive(Clone)]
struct Shared {
    handler: Handler,
    requests: Arc<Mutex<Vec<Recorded>>>,
    seen: Arc<Mutex<HashMap<String, usize>>>,
    inflight: Arc<AtomicUsize>,
    peak: Arc<AtomicUsize>,
}

pub struct StubServer {
    pub base_url: String,
    shared: Shared,
    task: JoinHandle<()>,
}

impl StubServer {
    pub async fn start(handler: Handler) -> std::io::Result<Self> {
        let shared = Shared {
            handler,
            requests: Arc::default(),
            seen: Arc::default(),
            inflight: Arc::default(),
            peak: Arc::default(),
        };
        let app = Router::new().fallback(serve).with_state(shared.clone());
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
        let addr = listener.local_addr()?;
        let task = tokio::spawn(async move {
            let _ = axum::serve(listener, app).await;
        });
        Ok(StubServer {
            base_url: format!("http://{addr}"),
            shared,
            task,
        })
    }

    pub fn requests(&self) -> Vec<Recorded> {
        self.shared.requests.lock().unwrap().clone()
    }

    /// Most requests the server was handling at once.
    pub fn peak_inflight(&self) -> usize {
        self.shared.peak.load(Ordering::SeqCst)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.task.abort();
    }
}

async fn serve(State(s): State<Shared>, uri: Uri, headers: HeaderMap, body: Bytes) -> Response {
    let now = s.inflight.fetch_add(1, Ordering::SeqCst) + 1;
    s.peak.fetch_max(now, Ordering::SeqCst);
    let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
    let path = uri.path().to_string();
    let n = {
        let mut seen = s.seen.lock().unwrap();
        let c = seen.entry(format!("{path} {body}")).or_insert(0);
        *c += 1;
        *c - 1
    };
    s.requests.lock().unwrap().push(Recorded {
        path: path.clone(),
        body: body.clone(),
        authorization: headers
            .get("authorization")
            .and_then(|v| v.to_str().ok())
            .map(str::to_string),
    });
    let reply = (s.handler)(&path, &body, n);
    if reply.delay_ms > 0 {
        tokio::time::sleep(Duration::from_millis(reply.delay_ms)).await;
    }
    s.inflight.fetch_sub(1, Ordering::SeqCst);
    let status = StatusCode::from_u16(reply.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, Json(reply.body)).into_response()
}
