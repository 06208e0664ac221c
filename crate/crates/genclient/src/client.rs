use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use futures::future::join_all;
use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Semaphore;

use crate::config::{EndpointConfig, GenMode, GenRequest};
use crate::dedupe::Pair;
use crate::error::{Error, Result};
use crate::split::split_questions;

struct Secret(String);

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("<redacted>")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CallKind {
    /// Magpie template completion producing an instruction.
    Prefix,
    /// Crescent bait prompt producing a list of questions.
    Bait,
    /// Chat call answering one instruction.
    Answer,
}

impl CallKind {
    fn code(self) -> u64 {
        match self {
            CallKind::Prefix => 0,
            CallKind::Bait => 1,
            CallKind::Answer => 2,
        }
    }
}

/// One HTTP attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallLog {
    pub item: usize,
    pub kind: CallKind,
    pub attempt: u32,
    /// HTTP status, or `None` for a transport failure.
    pub status: Option<u16>,
    pub latency_ms: f64,
    /// Backoff slept before this attempt.
    pub delay_ms: f64,
}

/// An item dropped after its retries or because the reply was unusable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skip {
    pub item: usize,
    pub kind: CallKind,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FetchOutcome {
    pub pairs: Vec<Pair>,
    pub calls: Vec<CallLog>,
    pub skipped: Vec<Skip>,
}

/// Async client for an OpenAI-compatible server. Concurrent HTTP requests
/// never exceed `max_inflight`.
#[derive(Debug)]
pub struct GenClient {
    http: reqwest::Client,
    cfg: EndpointConfig,
    token: Option<Secret>,
    gate: Arc<Semaphore>,
}

type CallResult = (std::result::Result<Value, String>, Vec<CallLog>);

impl GenClient {
    /// Reads the bearer token from the configured environment variable.
    pub fn new(cfg: EndpointConfig) -> Result<Self> {
        cfg.validate()?;
        let token = match &cfg.auth_token_env {
            Some(var) => Some(Secret(
                std::env::var(var).map_err(|_| Error::MissingToken(var.clone()))?,
            )),
            None => None,
        };
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_secs))
            .build()?;
        Ok(GenClient {
            http,
            gate: Arc::new(Semaphore::new(cfg.max_inflight)),
            cfg,
            token,
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.cfg.base_url.trim_end_matches('/'), path)
    }

    /// Backoff before attempt `attempt` (2-based): `base * 2^(attempt-2) *
    /// (1 + jitter * u)`. With jitter at most 1 the schedule never shrinks.
    fn delay(&self, rng: &mut ChaCha8Rng, attempt: u32) -> Duration {
        let r = &self.cfg.retry;
        let u: f64 = rng.random();
        let ms = r.base_delay_ms as f64 * 2f64.powi(attempt as i32 - 2) * (1.0 + r.jitter * u);
        Duration::from_secs_f64(ms / 1000.0)
    }

    async fn call(&self, item: usize, kind: CallKind, path: &str, body: Value) -> CallResult {
        let mut logs = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.retry.seed);
        rng.set_stream(item as u64 * 3 + kind.code());
        let mut last = String::new();
        for attempt in 1..=self.cfg.retry.max_attempts {
            let delay = if attempt > 1 { self.delay(&mut rng, attempt) } else { Duration::ZERO };
            if !delay.is_zero() {
                tokio::time::sleep(delay).await;
            }
            let permit = self.gate.acquire().await.expect("semaphore is never closed");
            let start = Instant::now();
            let mut req = self.http.post(self.url(path)).json(&body);
            if let Some(t) = &self.token {
                req = req.bearer_auth(&t.0);
            }
            let sent = req.send().await;
            let (status, outcome) = match sent {
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp.text().await;
                    (Some(status.as_u16()), Ok((status, text)))
                }
                Err(e) => (None, Err(e)),
            };
            drop(permit);
            let latency_ms = start.elapsed().as_secs_f64() * 1000.0;
            info!(
                "request item={item} kind={kind:?} attempt={attempt} status={} latency_ms={latency_ms:.1}",
                status.map_or("none".to_string(), |s| s.to_string())
            );
            logs.push(CallLog {
                item,
                kind,
                attempt,
                status,
                latency_ms,
                delay_ms: delay.as_secs_f64() * 1000.0,
            });
            match outcome {
                Ok((s, Ok(text))) if s.is_success() => {
                    return (serde_json::from_str(&text).map_err(|e| format!("malformed body: {e}")), logs);
                }
                Ok((s, _)) if s.as_u16() == 429 || s.is_server_error() => {
                    last = format!("status {s}");
                }
                Ok((s, _)) => return (Err(format!("status {s}")), logs),
                Err(e) => {
                    last = format!("transport: {}", e.without_url());
                }
            }
        }
        (Err(format!("gave up after {} attempts, last {last}", self.cfg.retry.max_attempts)), logs)
    }

    fn sampling_body(&self, req: &GenRequest) -> serde_json::Map<String, Value> {
        let s = &req.sampling;
        let mut m = serde_json::Map::new();
        m.insert("model".into(), json!(self.cfg.model_name));
        m.insert("top_p".into(), json!(s.top_p));
        m.insert("temperature".into(), json!(s.temperature));
        m.insert("max_tokens".into(), json!(s.max_tokens));
        m
    }

    fn chat_body(&self, req: &GenRequest, user: &str) -> Value {
        let mut m = self.sampling_body(req);
        m.insert("messages".into(), json!([{"role": "user", "content": user}]));
        Value::Object(m)
    }

    fn completion_body(&self, req: &GenRequest, prompt: &str) -> Value {
        let mut m = self.sampling_body(req);
        m.insert("prompt".into(), json!(prompt));
        Value::Object(m)
    }

    async fn answer(&self, req: &GenRequest, item: usize, instruction: String) -> (std::result::Result<Pair, Skip>, Vec<CallLog>) {
        let (res, logs) = self
            .call(item, CallKind::Answer, "/v1/chat/completions", self.chat_body(req, &instruction))
            .await;
        let out = res
            .and_then(|v| chat_text(&v))
            .map(|response| Pair { instruction, response })
            .map_err(|reason| Skip {
                item,
                kind: CallKind::Answer,
                reason,
            });
        (out, logs)
    }

    async fn magpie_item(&self, req: &GenRequest, item: usize) -> (std::result::Result<Pair, Skip>, Vec<CallLog>) {
        let template = req.magpie_template.as_deref().unwrap_or_default();
        let (res, mut logs) = self
            .call(item, CallKind::Prefix, "/v1/completions", self.completion_body(req, template))
            .await;
        let instruction = match res.and_then(|v| completion_text(&v)) {
            Ok(i) => i,
            Err(reason) => {
                return (
                    Err(Skip {
                        item,
                        kind: CallKind::Prefix,
                        reason,
                    }),
                    logs,
                )
            }
        };
        let (out, more) = self.answer(req, item, instruction).await;
        logs.extend(more);
        (out, logs)
    }

    /// Generates `req.count` pairs, over-generating in waves until the count
    /// is met or the budget of instruction-generating calls is spent. Pairs
    /// are ordered by item index whatever the completion order.
    pub async fn fetch_corpus(&self, req: &GenRequest) -> Result<FetchOutcome> {
        req.validate()?;
        let mut out = FetchOutcome {
            pairs: Vec::new(),
            calls: Vec::new(),
            skipped: Vec::new(),
        };
        let budget = req.budget();
        let mut issued = 0;
        let mut next_item = 0;
        while out.pairs.len() < req.count && issued < budget {
            match req.mode {
                GenMode::Magpie => {
                    let n = (req.count - out.pairs.len()).min(budget - issued);
                    let results = join_all((issued..issued + n).map(|i| self.magpie_item(req, i))).await;
                    issued += n;
                    collect(&mut out, results);
                }
                GenMode::Crescent => {
                    let bait = issued;
                    issued += 1;
                    let (res, logs) = self
                        .call(bait, CallKind::Bait, "/v1/chat/completions", self.chat_body(req, &req.bait_prompt))
                        .await;
                    out.calls.extend(logs);
                    let questions = match res.and_then(|v| chat_text(&v)) {
                        Ok(text) => split_questions(&text),
                        Err(reason) => {
                            warn!("bait call {bait} skipped: {reason}");
                            out.skipped.push(Skip {
                                item: bait,
                                kind: CallKind::Bait,
                                reason,
                            });
                            continue;
                        }
                    };
                    let need = req.count - out.pairs.len();
                    let take: Vec<String> = questions.into_iter().take(need).collect();
                    let first = next_item;
                    next_item += take.len();
                    let results = join_all(
                        take.into_iter()
                            .enumerate()
                            .map(|(k, q)| self.answer(req, first + k, q)),
                    )
                    .await;
                    collect(&mut out, results);
                }
            }
        }
        out.pairs.truncate(req.count);
        if out.pairs.len() < req.count {
            return Err(Error::Shortfall {
                got: out.pairs.len(),
                want: req.count,
                partial: Box::new(out.pairs),
            });
        }
        Ok(out)
    }
}

fn collect(out: &mut FetchOutcome, results: Vec<(std::result::Result<Pair, Skip>, Vec<CallLog>)>) {
    for (r, logs) in results {
        out.calls.extend(logs);
        match r {
            Ok(p) => out.pairs.push(p),
            Err(s) => {
                warn!("item {} skipped: {}", s.item, s.reason);
                out.skipped.push(s);
            }
        }
    }
}

fn nonempty(s: Option<&str>, what: &str) -> std::result::Result<String, String> {
    match s.map(str::trim) {
        Some(t) if !t.is_empty() => Ok(t.to_string()),
        _ => Err(format!("malformed reply: no {what}")),
    }
}

fn chat_text(v: &Value) -> std::result::Result<String, String> {
    nonempty(v.pointer("/choices/0/message/content").and_then(Value::as_str), "message content")
}

fn completion_text(v: &Value) -> std::result::Result<String, String> {
    nonempty(v.pointer("/choices/0/text").and_then(Value::as_str), "completion text")
}

/// Writes one `{"instruction", "response"}` object per line.
pub fn write_jsonl(path: impl AsRef<Path>, pairs: &[Pair]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    for p in pairs {
        serde_json::to_writer(&mut f, p)?;
        f.write_all(b"\n")?;
    }
    Ok(())
}
