mod common;

use std::sync::{Arc, Mutex};
use std::time::Duration;

use agentc::dom::{sanitize, SanitizerConfig};
use agentc::gateway::{
    builtin_price_table, lookup_price, parse_selector_reply, FailureClass, GatewayError, HttpRequest, HttpTransport,
    StubResponse, StubTransport, Transport, TransportError,
};
use agentc_core::blueprint::{Cardinality, SelectorSpec, Strategy, Tier, TokenUsage};
use agentc_core::cost::account_cost;
use axum::http::HeaderMap;
use axum::routing::post;
use axum::{Json, Router};
use common::*;
use rust_decimal::Decimal;
use serde_json::{json, Value};

/// Published rates in units of 1e-8 USD per token, typed in by hand.
const TABLE: [(&str, u64, u64, u64, u64, &str); 5] = [
    ("claude-opus-4.6", 500, 2_500, 11_628, 1_340, "0.0916"),
    ("claude-sonnet-4.5", 300, 1_500, 11_628, 1_670, "0.0599"),
    ("gpt-5.2-codex", 220, 1_100, 9_951, 1_447, "0.0377"),
    ("qwen3.5-397b", 67, 335, 10_738, 3_000, "0.0172"),
    ("qwen3-coder-next", 15, 75, 10_536, 550, "0.0020"),
];

#[test]
fn account_cost_reproduces_the_published_table() {
    let table = builtin_price_table();
    let tolerance: Decimal = "0.0005".parse().unwrap();
    for (model, r_in, r_out, t_in, t_out, published) in TABLE {
        let cost = account_cost(TokenUsage::new(t_in, t_out), &lookup_price(&table, model).unwrap());
        let oracle = Decimal::new((t_in * r_in + t_out * r_out) as i64, 8);
        assert_eq!(cost, oracle, "{model}");
        let published: Decimal = published.parse().unwrap();
        assert!((cost - published).abs() <= tolerance, "{model}: {cost} vs {published}");
    }
}

fn page1_skeleton() -> agentc::dom::SanitizedSkeleton {
    let html = std::fs::read_to_string(fixtures().join("task1/page1.html")).unwrap();
    sanitize(&html, &SanitizerConfig::default())
}

const URL: &str = "https://listing.test/people?page=1";

#[test]
fn stub_compile_stamps_meta_and_prices_the_call() {
    let stub = StubTransport::load(&fixtures().join("task1/compile-stub.json")).unwrap();
    let t = Arc::new(FnTransport::new(move |r: &HttpRequest| {
        let reply = stub.send(r).unwrap();
        let v: Value = serde_json::from_str(&reply.body).unwrap();
        StubResponse::new(
            v["choices"][0]["message"]["content"].clone(),
            TokenUsage::new(
                v["usage"]["prompt_tokens"].as_u64().unwrap(),
                v["usage"]["completion_tokens"].as_u64().unwrap(),
            ),
        )
    }));
    let out = gateway(t.clone())
        .compile(&page1_skeleton(), URL, "collect every profile")
        .unwrap();
    let bp = out.blueprint().expect("compiled");
    assert_eq!(bp.meta.intent, "collect every profile");
    assert_eq!(bp.meta.source_url, URL);
    assert_eq!(bp.meta.compiled_at, "2026-03-02T09:00:00Z");
    assert_eq!(bp.meta.model_id, SONNET);
    assert_eq!(bp.meta.token_usage, TokenUsage::new(11_628, 1_340));
    // 11628 * 3e-6 + 1340 * 15e-6
    assert_eq!(out.cost_usd, "0.054984".parse::<Decimal>().unwrap());
    assert_eq!(bp.steps, blueprint("task1/blueprint.json").steps);

    let sent = t.requests();
    assert_eq!(sent.len(), 1);
    let body = &sent[0].body;
    assert_eq!(body["model"], SONNET);
    assert_eq!(body["temperature"], 0);
    assert_eq!(body["messages"][0]["role"], "system");
    assert!(user_text(&sent[0]).contains(URL));
    assert!(user_text(&sent[0]).contains("collect every profile"));
    assert!(body.get("max_tokens").is_none());
}

fn compile_with(reply: StubResponse) -> agentc::gateway::CompileOutcome {
    gateway(Arc::new(StubTransport::single(reply)))
        .compile(&page1_skeleton(), URL, "collect")
        .unwrap()
}

#[test]
fn malformed_reply_is_a_schema_violation() {
    let out = compile_with(StubResponse::new("I could not find a table.", TokenUsage::new(100, 10)));
    let f = out.failure().unwrap();
    assert_eq!(f.class, FailureClass::SchemaViolation);
    assert_eq!(f.raw_output, "I could not find a table.");
    // A failed compile is still billed.
    assert_eq!(out.cost_usd, "0.00045".parse::<Decimal>().unwrap());
}

#[test]
fn cut_off_reply_at_the_token_limit_is_reasoning_exhaustion() {
    let mut r = StubResponse::new(
        "```json\n{\"version\": \"1.0\", \"steps\": [{\"id\": \"open\"",
        TokenUsage::new(100, 4_096),
    );
    r.finish_reason = "length".into();
    assert_eq!(
        compile_with(r).failure().unwrap().class,
        FailureClass::ReasoningExhaustion
    );

    let mut empty = StubResponse::new("", TokenUsage::new(100, 4_096));
    empty.finish_reason = "length".into();
    assert_eq!(
        compile_with(empty).failure().unwrap().class,
        FailureClass::ReasoningExhaustion
    );
}

#[test]
fn cut_off_reply_without_the_limit_is_a_schema_violation() {
    let r = StubResponse::new("{\"version\": \"1.0\", \"steps\": [", TokenUsage::new(100, 10));
    assert_eq!(compile_with(r).failure().unwrap().class, FailureClass::SchemaViolation);
}

#[test]
fn invalid_blueprint_reports_every_error() {
    let reply = json!({"version": "1.0", "steps": [
        {"id": "a", "kind": "navigate", "url": "/relative"},
        {"id": "a", "kind": "delay", "base_ms": 10, "jitter_ms": 0}
    ]});
    let out = compile_with(StubResponse::new(reply, TokenUsage::new(100, 10)));
    let f = out.failure().unwrap();
    assert_eq!(f.class, FailureClass::SchemaViolation);
    assert!(f.errors.len() >= 2, "{:?}", f.errors);
}

#[test]
fn transport_and_status_errors_surface() {
    let mut slow = StubResponse::new("{}", TokenUsage::new(1, 1));
    slow.latency_ms = 999_999;
    let err = gateway(Arc::new(StubTransport::single(slow)))
        .compile(&page1_skeleton(), URL, "x")
        .unwrap_err();
    assert!(
        matches!(
            err,
            GatewayError::Transport(TransportError::Timeout { after_ms: 30_000 })
        ),
        "{err}"
    );

    let mut denied = StubResponse::new("x".repeat(2_000), TokenUsage::default());
    denied.status = 429;
    match gateway(Arc::new(StubTransport::single(denied))).compile(&page1_skeleton(), URL, "x") {
        Err(GatewayError::Status { status: 429, body }) => assert_eq!(body.len(), 512),
        other => panic!("{other:?}"),
    }

    let mut cfg = config(SONNET);
    cfg.api_key_env_name = Some("AGENTC_TEST_KEY_THAT_IS_NOT_SET".into());
    let gw = agentc::gateway::Gateway::new(
        cfg,
        Arc::new(StubTransport::single(StubResponse::new("{}", TokenUsage::default()))),
    );
    assert!(matches!(
        gw.compile(&page1_skeleton(), URL, "x"),
        Err(GatewayError::MissingApiKey(name)) if name == "AGENTC_TEST_KEY_THAT_IS_NOT_SET"
    ));
}

#[test]
fn selector_replies_keep_the_original_cardinality() {
    let original = SelectorSpec {
        strategies: vec![Strategy::new(Tier::StableClass, ".old")],
        expected_cardinality: Cardinality::Many,
    };
    let bare = r#"[{"tier": "data_attr", "expression": "[data-field=\"x\"]"}]"#;
    let wrapped = format!("Here you go:\n```json\n{{\"strategy_list\": {bare}}}\n```");
    for text in [bare.to_string(), wrapped] {
        let spec = parse_selector_reply(&text, &original).unwrap();
        assert_eq!(spec.expected_cardinality, Cardinality::Many);
        assert_eq!(
            spec.strategies,
            vec![Strategy::new(Tier::DataAttr, "[data-field=\"x\"]")]
        );
    }
    assert!(parse_selector_reply("[]", &original).is_err());
    assert!(parse_selector_reply("no idea", &original).is_err());
    let misordered =
        r#"[{"tier": "positional", "expression": "li"}, {"tier": "aria", "expression": "[aria-label=\"a\"]"}]"#;
    assert!(parse_selector_reply(misordered, &original).is_err());
}

type Seen = Arc<Mutex<Vec<(Option<String>, Value)>>>;

fn mock_endpoint(delay: Duration) -> (tokio::runtime::Runtime, String, Seen) {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let seen: Seen = Arc::default();
    let log = seen.clone();
    let app = Router::new().route(
        "/v1/chat/completions",
        post(move |headers: HeaderMap, Json(body): Json<Value>| {
            let log = log.clone();
            async move {
                tokio::time::sleep(delay).await;
                let auth = headers.get("authorization").map(|v| v.to_str().unwrap().to_string());
                log.lock().unwrap().push((auth, body));
                Json(StubResponse::new("{\"ok\": true}", TokenUsage::new(7, 3)).envelope())
            }
        }),
    );
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    rt.spawn(async move { axum::serve(listener, app).await.unwrap() });
    (rt, url, seen)
}

#[test]
fn http_transport_posts_json_with_the_bearer() {
    let (_rt, url, seen) = mock_endpoint(Duration::ZERO);
    let request = HttpRequest {
        endpoint: url,
        bearer: Some("sekret".into()),
        body: json!({"model": "m", "messages": []}),
        timeout_ms: 5_000,
    };
    let reply = HttpTransport.send(&request).unwrap();
    assert_eq!(reply.status, 200);
    let v: Value = serde_json::from_str(&reply.body).unwrap();
    assert_eq!(v["usage"]["prompt_tokens"], 7);
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 1);
    assert_eq!(seen[0].0.as_deref(), Some("Bearer sekret"));
    assert_eq!(seen[0].1, request.body);
}

#[test]
fn http_transport_times_out() {
    let (_rt, url, _) = mock_endpoint(Duration::from_secs(3));
    let request = HttpRequest {
        endpoint: url,
        bearer: None,
        body: json!({}),
        timeout_ms: 200,
    };
    assert_eq!(
        HttpTransport.send(&request),
        Err(TransportError::Timeout { after_ms: 200 })
    );
}
