use std::sync::Arc;

use sasft_genclient::testing::{chat_reply, completion_reply, StubReply, StubServer};
use sasft_genclient::*;
use serde_json::Value;

fn endpoint(server: &StubServer, max_inflight: usize) -> EndpointConfig {
    EndpointConfig {
        base_url: server.base_url.clone(),
        model_name: "stub".into(),
        max_inflight,
        retry: RetryPolicy {
            base_delay_ms: 5,
            ..RetryPolicy::default()
        },
        ..EndpointConfig::default()
    }
}

fn user_message(body: &Value) -> String {
    body.pointer("/messages/0/content").and_then(Value::as_str).unwrap_or_default().to_string()
}

/// Answers every chat question with "A: <question>" and completes every
/// magpie prefix with a question numbered by how often it was asked.
fn echo_handler(path: &str, body: &Value, n: usize) -> StubReply {
    match path {
        "/v1/completions" => StubReply::ok(completion_reply(&format!(" Question number {n}? "))),
        "/v1/chat/completions" => {
            let q = user_message(body);
            if q == DEFAULT_BAIT {
                StubReply::ok(chat_reply("1. How do you brew tea?\n2. Why do cats purr?\n3. Ok?\n4. When is trash day?"))
            } else {
                StubReply::ok(chat_reply(&format!("A: {q}")))
            }
        }
        _ => StubReply::status(404),
    }
}

#[tokio::test]
async fn crescent_output_is_byte_exact() {
    let server = StubServer::start(Arc::new(echo_handler)).await.unwrap();
    let client = GenClient::new(endpoint(&server, 2)).unwrap();
    let req = GenRequest {
        count: 5,
        ..GenRequest::default()
    };
    let out = client.fetch_corpus(&req).await.unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pairs.jsonl");
    write_jsonl(&path, &out.pairs).unwrap();
    let expected = "\
{\"instruction\":\"How do you brew tea?\",\"response\":\"A: How do you brew tea?\"}
{\"instruction\":\"Why do cats purr?\",\"response\":\"A: Why do cats purr?\"}
{\"instruction\":\"When is trash day?\",\"response\":\"A: When is trash day?\"}
{\"instruction\":\"How do you brew tea?\",\"response\":\"A: How do you brew tea?\"}
{\"instruction\":\"Why do cats purr?\",\"response\":\"A: Why do cats purr?\"}
";
    assert_eq!(std::fs::read_to_string(&path).unwrap(), expected);
    let deduped = dedupe(out.pairs.clone());
    assert_eq!(deduped.len(), 3);
}

#[tokio::test]
async fn magpie_sends_raw_template_then_chat() {
    let server = StubServer::start(Arc::new(echo_handler)).await.unwrap();
    let client = GenClient::new(endpoint(&server, 3)).unwrap();
    let template = "<|start|>user<|sep|>";
    let req = GenRequest {
        mode: GenMode::Magpie,
        count: 3,
        magpie_template: Some(template.into()),
        ..GenRequest::default()
    };
    let out = client.fetch_corpus(&req).await.unwrap();
    assert_eq!(out.pairs.len(), 3);
    for p in &out.pairs {
        assert!(p.instruction.starts_with("Question number"));
        assert_eq!(p.response, format!("A: {}", p.instruction));
    }
    let reqs = server.requests();
    let prefixes: Vec<_> = reqs.iter().filter(|r| r.path == "/v1/completions").collect();
    assert_eq!(prefixes.len(), 3);
    for r in prefixes {
        assert_eq!(r.body["prompt"], template);
    }
}

#[tokio::test]
async fn wire_defaults() {
    let server = StubServer::start(Arc::new(echo_handler)).await.unwrap();
    let client = GenClient::new(endpoint(&server, 1)).unwrap();
    client
        .fetch_corpus(&GenRequest {
            count: 1,
            ..GenRequest::default()
        })
        .await
        .unwrap();
    for r in server.requests() {
        assert_eq!(r.body["top_p"], 0.9);
        assert_eq!(r.body["temperature"], 0.7);
        assert_eq!(r.body["max_tokens"], 256);
        assert_eq!(r.body["model"], "stub");
    }
}

#[tokio::test]
async fn retries_429_then_succeeds() {
    let server = StubServer::start(Arc::new(|path: &str, body: &Value, n: usize| {
        if path == "/v1/chat/completions" && user_message(body) != DEFAULT_BAIT && n < 2 {
            StubReply::status(429)
        } else {
            echo_handler(path, body, n)
        }
    }))
    .await
    .unwrap();
    let client = GenClient::new(endpoint(&server, 1)).unwrap();
    let out = client
        .fetch_corpus(&GenRequest {
            count: 1,
            ..GenRequest::default()
        })
        .await
        .unwrap();
    let answers: Vec<_> = out.calls.iter().filter(|c| c.kind == CallKind::Answer).collect();
    assert_eq!(answers.len(), 3);
    assert_eq!(answers.iter().map(|c| c.status).collect::<Vec<_>>(), vec![Some(429), Some(429), Some(200)]);
    assert!(answers.windows(2).all(|w| w[1].delay_ms >= w[0].delay_ms));
    assert!(answers[1].delay_ms >= 5.0 && answers[2].delay_ms >= 10.0);
}

#[tokio::test]
async fn exhausted_retries_skip_the_item() {
    let server = StubServer::start(Arc::new(|path: &str, body: &Value, n: usize| {
        if user_message(body) == "Why do cats purr?" {
            StubReply::status(503)
        } else {
            echo_handler(path, body, n)
        }
    }))
    .await
    .unwrap();
    let client = GenClient::new(endpoint(&server, 4)).unwrap();
    let out = client
        .fetch_corpus(&GenRequest {
            count: 3,
            ..GenRequest::default()
        })
        .await
        .unwrap();
    let failed: Vec<_> = out
        .calls
        .iter()
        .filter(|c| c.status == Some(503))
        .collect();
    assert_eq!(failed.len(), 5, "second wave only needs one question");
    assert!(out.skipped.iter().all(|s| s.reason.contains("gave up")));
    assert!(out.pairs.iter().all(|p| p.instruction != "Why do cats purr?"));
    assert_eq!(out.pairs.len(), 3);
}

#[tokio::test]
async fn client_errors_are_not_retried_and_budget_is_enforced() {
    let server = StubServer::start(Arc::new(|path: &str, body: &Value, n: usize| {
        if path == "/v1/completions" {
            StubReply::status(400)
        } else {
            echo_handler(path, body, n)
        }
    }))
    .await
    .unwrap();
    let client = GenClient::new(endpoint(&server, 2)).unwrap();
    let err = client
        .fetch_corpus(&GenRequest {
            mode: GenMode::Magpie,
            count: 2,
            magpie_template: Some("<t>".into()),
            budget: Some(3),
            ..GenRequest::default()
        })
        .await
        .unwrap_err();
    match err {
        Error::Shortfall { got, want, .. } => assert_eq!((got, want), (0, 2)),
        other => panic!("{other:?}"),
    }
    assert_eq!(server.requests().len(), 3);
}

#[tokio::test]
async fn inflight_bound_and_order() {
    let server = StubServer::start(Arc::new(|path: &str, body: &Value, n: usize| {
        // Later items answer faster so completion order is reversed.
        let q = user_message(body);
        let delay = if q.contains("number 0") { 60 } else { 5 };
        echo_handler(path, body, n).delayed(if path == "/v1/chat/completions" { delay } else { 10 })
    }))
    .await
    .unwrap();
    let client = GenClient::new(endpoint(&server, 3)).unwrap();
    let out = client
        .fetch_corpus(&GenRequest {
            mode: GenMode::Magpie,
            count: 12,
            magpie_template: Some("<t>".into()),
            ..GenRequest::default()
        })
        .await
        .unwrap();
    assert!(server.peak_inflight() <= 3, "peak {}", server.peak_inflight());
    assert!(server.peak_inflight() >= 2);
    // Stub numbers identical prefixes in arrival order, so only the
    // request-index ordering of answers is checked here.
    let items: Vec<_> = out.calls.iter().filter(|c| c.kind == CallKind::Answer).map(|c| c.item).collect();
    assert_eq!(items, (0..12).collect::<Vec<_>>());
}

#[tokio::test]
async fn token_is_sent_but_never_logged() {
    let server = StubServer::start(Arc::new(echo_handler)).await.unwrap();
    std::env::set_var("SASFT_TEST_TOKEN", "sk-secret-value");
    let cfg = EndpointConfig {
        auth_token_env: Some("SASFT_TEST_TOKEN".into()),
        ..endpoint(&server, 1)
    };
    let client = GenClient::new(cfg).unwrap();
    assert!(!format!("{client:?}").contains("sk-secret-value"));
    let out = client
        .fetch_corpus(&GenRequest {
            count: 1,
            ..GenRequest::default()
        })
        .await
        .unwrap();
    assert!(server
        .requests()
        .iter()
        .all(|r| r.authorization.as_deref() == Some("Bearer sk-secret-value")));
    assert!(!serde_json::to_string(&out).unwrap().contains("sk-secret-value"));
    let missing = EndpointConfig {
        auth_token_env: Some("SASFT_TEST_TOKEN_UNSET".into()),
        ..endpoint(&server, 1)
    };
    assert!(matches!(GenClient::new(missing), Err(Error::MissingToken(_))));
}

#[test]
fn config_validation_lists_every_field() {
    let bad = EndpointConfig {
        max_inflight: 0,
        timeout_secs: 0.0,
        ..EndpointConfig::default()
    };
    let msg = bad.validate().unwrap_err().to_string();
    assert!(msg.contains("max_inflight") && msg.contains("timeout_secs"));
    let req = GenRequest {
        mode: GenMode::Magpie,
        count: 0,
        ..GenRequest::default()
    };
    let msg = req.validate().unwrap_err().to_string();
    assert!(msg.contains("count") && msg.contains("magpie_template"));
}
