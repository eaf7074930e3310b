use agentc_core::blueprint::{validate, validate_draft, Rule};
use serde_json::{json, Value};

fn base() -> Value {
    json!({
        "version": "1.0",
        "meta": {"intent": "x", "source_url": "https://a.test/", "compiled_at": "2026-01-01T00:00:00Z",
                 "model_id": "m", "token_usage": {"input_tokens": 1, "output_tokens": 1}},
        "steps": [
            {"id": "open", "kind": "navigate", "url": "https://a.test/"},
            {"id": "go", "kind": "click", "selector": {"strategies": [
                {"tier": "aria", "expression": "[aria-label=Go]"},
                {"tier": "text", "expression": "button >> text=Go"}], "expected_cardinality": "one"}}
        ]
    })
}

fn rules(v: &Value) -> Vec<(String, Rule)> {
    match validate(v.to_string().as_bytes()) {
        Ok(_) => Vec::new(),
        Err(errors) => errors.into_iter().map(|e| (e.path, e.rule)).collect(),
    }
}

#[test]
fn base_is_valid() {
    assert!(rules(&base()).is_empty());
}

#[test]
fn reports_every_violation_with_its_path() {
    let mut v = base();
    v["version"] = json!("2.0");
    v["steps"][0]["url"] = json!("/relative");
    v["steps"][1]["id"] = json!("open");
    v["steps"][1]["selector"]["strategies"] = json!([
        {"tier": "text", "expression": "a >> text=Go"},
        {"tier": "aria", "expression": "[aria-label=Go]"}]);
    v["steps"][1]["extra"] = json!(true);
    let found = rules(&v);
    for expected in [
        ("$.version", Rule::UnsupportedVersion),
        ("$.steps[0].url", Rule::InvalidUrl),
        ("$.steps[1].extra", Rule::UnknownField),
    ] {
        assert!(
            found.iter().any(|(p, r)| p == expected.0 && *r == expected.1),
            "missing {expected:?} in {found:?}"
        );
    }
    assert!(found.iter().any(|(_, r)| *r == Rule::DuplicateId), "{found:?}");
    assert!(found.iter().any(|(_, r)| *r == Rule::TierOrder), "{found:?}");
}

#[test]
fn positional_may_not_lead() {
    let mut v = base();
    v["steps"][1]["selector"]["strategies"] = json!([
        {"tier": "positional", "expression": "li:nth-child(2)"},
        {"tier": "id", "expression": "#go"}]);
    assert!(rules(&v).iter().any(|(_, r)| *r == Rule::PositionalFirst));
}

#[test]
fn unknown_kind_and_missing_field() {
    let mut v = base();
    v["steps"][0] = json!({"id": "s", "kind": "teleport"});
    v["steps"][1]["selector"]
        .as_object_mut()
        .unwrap()
        .remove("expected_cardinality");
    let found = rules(&v);
    assert!(found.iter().any(|(_, r)| *r == Rule::UnknownKind), "{found:?}");
    assert!(found.iter().any(|(_, r)| *r == Rule::MissingField), "{found:?}");
}

#[test]
fn loops_nest_at_most_three_deep() {
    let lp = |body: Value| {
        json!({"id": format!("l{}", body.to_string().len()), "kind": "loop", "mode": "repeat_count", "count": 2,
                                  "max_iterations": 3, "inter_iteration_delay_ms": 0, "body": [body]})
    };
    let leaf = json!({"id": "d", "kind": "delay", "base_ms": 1, "jitter_ms": 0});
    let mut v = base();
    v["steps"] = json!([lp(lp(lp(leaf.clone())))]);
    assert!(rules(&v).is_empty(), "{:?}", rules(&v));
    v["steps"] = json!([lp(lp(lp(lp(leaf))))]);
    assert!(rules(&v).iter().any(|(_, r)| *r == Rule::Depth));
}

#[test]
fn zero_timeouts_and_empty_lists_are_rejected() {
    let mut v = base();
    v["steps"] = json!([
        {"id": "w", "kind": "wait", "condition": {"type": "network_idle"}, "timeout_ms": 0},
        {"id": "e", "kind": "extract", "dataset": "d", "fields": [],
         "scope_selector": {"strategies": [], "expected_cardinality": "many"}}
    ]);
    let found = rules(&v);
    assert!(
        found
            .iter()
            .any(|(p, r)| p == "$.steps[0].timeout_ms" && *r == Rule::Range),
        "{found:?}"
    );
    assert!(
        found.iter().filter(|(_, r)| *r == Rule::Empty).count() >= 2,
        "{found:?}"
    );
}

#[test]
fn drafts_may_be_empty_but_runs_may_not() {
    let mut v = base();
    v["steps"] = json!([]);
    assert!(validate_draft(v.to_string().as_bytes()).is_ok());
    assert!(rules(&v).iter().any(|(p, r)| p == "$.steps" && *r == Rule::Empty));
}

#[test]
fn syntax_errors_are_reported_not_panicked() {
    let errors = validate(b"{\"version\": ").unwrap_err();
    assert_eq!(errors[0].rule, Rule::Syntax);
    let errors = validate(&[0xff, 0xfe]).unwrap_err();
    assert_eq!(errors[0].rule, Rule::Syntax);
}
