//! Exhaustive blueprint validation.
//!
//! The checker walks the raw JSON tree and records every violation with a
//! JSON path instead of stopping at the first one. Only a tree with zero
//! violations is converted into a typed [`Blueprint`].

use alloc::borrow::ToOwned;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::selector::{check_tier_order, Strategy, Tier, TierOrderError};
use super::{Blueprint, StepKind, BLUEPRINT_VERSION, MAX_LOOP_DEPTH};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// Not parseable as JSON (or not UTF-8).
    Syntax,
    MissingField,
    UnknownField,
    TypeMismatch,
    Empty,
    DuplicateId,
    DuplicateField,
    TierOrder,
    PositionalFirst,
    Range,
    Depth,
    UnsupportedVersion,
    InvalidUrl,
    UnknownKind,
    UnknownVariant,
    /// The tree passed every structural rule but still failed typed decoding.
    Schema,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationError {
    pub path: String,
    pub rule: Rule,
    pub detail: String,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {:?}: {}", self.path, self.rule, self.detail)
    }
}

/// Validates an executable blueprint (at least one step).
pub fn validate(raw: &[u8]) -> Result<Blueprint, Vec<ValidationError>> {
    validate_bytes(raw, false)
}

/// Validates a draft; an empty step list is permitted.
pub fn validate_draft(raw: &[u8]) -> Result<Blueprint, Vec<ValidationError>> {
    validate_bytes(raw, true)
}

fn validate_bytes(raw: &[u8], draft: bool) -> Result<Blueprint, Vec<ValidationError>> {
    match serde_json::from_slice::<Value>(raw) {
        Ok(value) => validate_value(&value, draft),
        Err(e) => Err(alloc::vec![ValidationError {
            path: "$".into(),
            rule: Rule::Syntax,
            detail: e.to_string(),
        }]),
    }
}

pub fn validate_value(value: &Value, draft: bool) -> Result<Blueprint, Vec<ValidationError>> {
    let mut checker = Checker::default();
    checker.blueprint(value, draft);
    if !checker.errors.is_empty() {
        return Err(checker.errors);
    }
    serde_json::from_value(value.clone()).map_err(|e| {
        alloc::vec![ValidationError {
            path: "$".into(),
            rule: Rule::Schema,
            detail: e.to_string(),
        }]
    })
}

/// `scheme://host...` with no whitespace.
pub(crate) fn is_absolute_url(s: &str) -> bool {
    let Some((scheme, rest)) = s.split_once(':') else {
        return false;
    };
    let mut chars = scheme.chars();
    let scheme_ok = chars.next().is_some_and(|c| c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '+' | '-' | '.'));
    let Some(after) = rest.strip_prefix("//") else {
        return false;
    };
    let host = after.split(['/', '?', '#']).next().unwrap_or("");
    scheme_ok && !host.is_empty() && !s.chars().any(char::is_whitespace)
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

#[derive(Default)]
struct Checker {
    errors: Vec<ValidationError>,
    ids: BTreeMap<String, String>,
}

impl Checker {
    fn err(&mut self, path: &str, rule: Rule, detail: impl Into<String>) {
        self.errors.push(ValidationError {
            path: path.to_owned(),
            rule,
            detail: detail.into(),
        });
    }

    fn object<'v>(&mut self, v: &'v Value, path: &str) -> Option<&'v Map<String, Value>> {
        match v {
            Value::Object(m) => Some(m),
            other => {
                self.err(
                    path,
                    Rule::TypeMismatch,
                    format!("expected object, found {}", type_name(other)),
                );
                None
            }
        }
    }

    fn array<'v>(&mut self, v: &'v Value, path: &str) -> Option<&'v Vec<Value>> {
        match v {
            Value::Array(a) => Some(a),
            other => {
                self.err(
                    path,
                    Rule::TypeMismatch,
                    format!("expected array, found {}", type_name(other)),
                );
                None
            }
        }
    }

    /// Reports missing required keys and any key outside `required ∪ optional`.
    fn keys(&mut self, map: &Map<String, Value>, path: &str, required: &[&str], optional: &[&str]) {
        for key in required {
            if !map.contains_key(*key) {
                self.err(&format!("{path}.{key}"), Rule::MissingField, "required field is absent");
            }
        }
        for key in map.keys() {
            if !required.contains(&key.as_str()) && !optional.contains(&key.as_str()) {
                self.err(
                    &format!("{path}.{key}"),
                    Rule::UnknownField,
                    "field is not part of the schema",
                );
            }
        }
    }

    fn string<'v>(&mut self, map: &'v Map<String, Value>, key: &str, path: &str) -> Option<&'v str> {
        let v = map.get(key)?;
        match v {
            Value::String(s) => Some(s),
            other => {
                self.err(
                    &format!("{path}.{key}"),
                    Rule::TypeMismatch,
                    format!("expected string, found {}", type_name(other)),
                );
                None
            }
        }
    }

    fn nonempty<'v>(&mut self, map: &'v Map<String, Value>, key: &str, path: &str) -> Option<&'v str> {
        let s = self.string(map, key, path)?;
        if s.trim().is_empty() {
            self.err(&format!("{path}.{key}"), Rule::Empty, "must not be empty");
            return None;
        }
        Some(s)
    }

    fn uint(&mut self, map: &Map<String, Value>, key: &str, path: &str, max: u64) -> Option<u64> {
        let v = map.get(key)?;
        let at = format!("{path}.{key}");
        match v {
            Value::Number(n) => match n.as_u64() {
                Some(x) if x <= max => Some(x),
                Some(x) => {
                    self.err(&at, Rule::Range, format!("{x} exceeds maximum {max}"));
                    None
                }
                None => {
                    self.err(&at, Rule::Range, format!("{n} is not a non-negative integer"));
                    None
                }
            },
            other => {
                self.err(
                    &at,
                    Rule::TypeMismatch,
                    format!("expected integer, found {}", type_name(other)),
                );
                None
            }
        }
    }

    fn positive(&mut self, map: &Map<String, Value>, key: &str, path: &str, max: u64) {
        if let Some(0) = self.uint(map, key, path, max) {
            self.err(&format!("{path}.{key}"), Rule::Range, "must be greater than zero");
        }
    }

    fn blueprint(&mut self, v: &Value, draft: bool) {
        let Some(map) = self.object(v, "$") else {
            return;
        };
        self.keys(map, "$", &["version", "meta", "steps"], &[]);
        if let Some(version) = self.string(map, "version", "$") {
            if version != BLUEPRINT_VERSION {
                self.err(
                    "$.version",
                    Rule::UnsupportedVersion,
                    format!("expected \"{BLUEPRINT_VERSION}\", found \"{version}\""),
                );
            }
        }
        if let Some(meta) = map.get("meta") {
            self.meta(meta, "$.meta");
        }
        if let Some(steps) = map.get("steps") {
            if let Some(list) = self.array(steps, "$.steps") {
                if list.is_empty() && !draft {
                    self.err(
                        "$.steps",
                        Rule::Empty,
                        "an executable blueprint needs at least one step",
                    );
                }
                self.step_list(list, "$.steps", 0);
            }
        }
    }

    fn meta(&mut self, v: &Value, path: &str) {
        let Some(map) = self.object(v, path) else {
            return;
        };
        self.keys(
            map,
            path,
            &["intent", "source_url", "compiled_at", "model_id", "token_usage"],
            &[],
        );
        self.string(map, "intent", path);
        self.string(map, "model_id", path);
        self.nonempty(map, "compiled_at", path);
        if let Some(url) = self.string(map, "source_url", path) {
            if !is_absolute_url(url) {
                self.err(
                    &format!("{path}.source_url"),
                    Rule::InvalidUrl,
                    format!("`{url}` is not an absolute URL"),
                );
            }
        }
        if let Some(usage) = map.get("token_usage") {
            let at = format!("{path}.token_usage");
            if let Some(u) = self.object(usage, &at) {
                self.keys(u, &at, &["input_tokens", "output_tokens"], &[]);
                self.uint(u, "input_tokens", &at, u64::MAX);
                self.uint(u, "output_tokens", &at, u64::MAX);
            }
        }
    }

    fn step_list(&mut self, list: &[Value], path: &str, loop_depth: usize) {
        for (i, step) in list.iter().enumerate() {
            self.step(step, &format!("{path}[{i}]"), loop_depth);
        }
    }

    fn step(&mut self, v: &Value, path: &str, loop_depth: usize) {
        let Some(map) = self.object(v, path) else {
            return;
        };
        if let Some(id) = self.nonempty(map, "id", path) {
            if let Some(first) = self.ids.get(id) {
                let detail = format!("id `{id}` already used at {first}");
                self.err(&format!("{path}.id"), Rule::DuplicateId, detail);
            } else {
                self.ids.insert(id.to_owned(), format!("{path}.id"));
            }
        }
        let Some(kind_str) = self.string(map, "kind", path) else {
            if !map.contains_key("kind") {
                self.err(&format!("{path}.kind"), Rule::MissingField, "required field is absent");
            }
            return;
        };
        let Some(kind) = StepKind::parse(kind_str) else {
            self.err(
                &format!("{path}.kind"),
                Rule::UnknownKind,
                format!("`{kind_str}` is not one of navigate, click, input, select, extract, wait, delay, loop"),
            );
            return;
        };
        match kind {
            StepKind::Navigate => {
                self.keys(map, path, &["id", "kind", "url"], &[]);
                if let Some(url) = self.nonempty(map, "url", path) {
                    if !is_absolute_url(url) {
                        self.err(
                            &format!("{path}.url"),
                            Rule::InvalidUrl,
                            format!("`{url}` is not an absolute URL"),
                        );
                    }
                }
            }
            StepKind::Click => {
                self.keys(map, path, &["id", "kind", "selector"], &[]);
                self.selector_field(map, "selector", path);
            }
            StepKind::Input => {
                self.keys(map, path, &["id", "kind", "selector", "value_source"], &[]);
                self.selector_field(map, "selector", path);
                if let Some(src) = map.get("value_source") {
                    self.value_source(src, &format!("{path}.value_source"));
                }
            }
            StepKind::Select => {
                self.keys(map, path, &["id", "kind", "selector", "option_label"], &[]);
                self.selector_field(map, "selector", path);
                self.nonempty(map, "option_label", path);
            }
            StepKind::Extract => {
                self.keys(map, path, &["id", "kind", "scope_selector", "fields", "dataset"], &[]);
                self.selector_field(map, "scope_selector", path);
                self.nonempty(map, "dataset", path);
                if let Some(fields) = map.get("fields") {
                    self.fields(fields, &format!("{path}.fields"));
                }
            }
            StepKind::Wait => {
                self.keys(map, path, &["id", "kind", "condition", "timeout_ms"], &[]);
                self.positive(map, "timeout_ms", path, u64::MAX);
                if let Some(cond) = map.get("condition") {
                    self.wait_condition(cond, &format!("{path}.condition"));
                }
            }
            StepKind::Delay => {
                self.keys(map, path, &["id", "kind", "base_ms", "jitter_ms"], &[]);
                self.uint(map, "base_ms", path, u64::MAX);
                self.uint(map, "jitter_ms", path, u64::MAX);
            }
            StepKind::Loop => self.loop_step(map, path, loop_depth),
        }
    }

    fn loop_step(&mut self, map: &Map<String, Value>, path: &str, loop_depth: usize) {
        let mode = self.string(map, "mode", path);
        let common = [
            "id",
            "kind",
            "mode",
            "max_iterations",
            "inter_iteration_delay_ms",
            "body",
        ];
        match mode {
            Some("paginate") => {
                let mut required = common.to_vec();
                required.push("next_selector");
                self.keys(map, path, &required, &[]);
                self.selector_field(map, "next_selector", path);
            }
            Some("repeat_count") => {
                let mut required = common.to_vec();
                required.push("count");
                self.keys(map, path, &required, &[]);
                self.positive(map, "count", path, u32::MAX as u64);
            }
            Some(other) => {
                self.err(
                    &format!("{path}.mode"),
                    Rule::UnknownVariant,
                    format!("`{other}` is not one of paginate, repeat_count"),
                );
            }
            None => {
                if !map.contains_key("mode") {
                    self.err(&format!("{path}.mode"), Rule::MissingField, "required field is absent");
                }
            }
        }
        self.positive(map, "max_iterations", path, u32::MAX as u64);
        self.uint(map, "inter_iteration_delay_ms", path, u64::MAX);
        let nesting = loop_depth + 1;
        if nesting > MAX_LOOP_DEPTH {
            self.err(
                path,
                Rule::Depth,
                format!("loop nesting depth {nesting} exceeds {MAX_LOOP_DEPTH}"),
            );
        }
        if let Some(body) = map.get("body") {
            let at = format!("{path}.body");
            if let Some(list) = self.array(body, &at) {
                if list.is_empty() {
                    self.err(&at, Rule::Empty, "loop body needs at least one step");
                }
                self.step_list(list, &at, nesting);
            }
        }
    }

    fn value_source(&mut self, v: &Value, path: &str) {
        let Some(map) = self.object(v, path) else {
            return;
        };
        if map.len() != 1 {
            self.err(
                path,
                Rule::UnknownVariant,
                "expected exactly one of `literal` or `field`",
            );
            return;
        }
        let (key, _) = map.iter().next().expect("len checked");
        match key.as_str() {
            "literal" => {
                self.string(map, "literal", path);
            }
            "field" => {
                self.nonempty(map, "field", path);
            }
            other => self.err(
                &format!("{path}.{other}"),
                Rule::UnknownVariant,
                "expected `literal` or `field`",
            ),
        }
    }

    fn wait_condition(&mut self, v: &Value, path: &str) {
        let Some(map) = self.object(v, path) else {
            return;
        };
        match self.string(map, "type", path) {
            Some("mutation_quiet") | Some("network_idle") => self.keys(map, path, &["type"], &[]),
            Some("selector_visible") => {
                self.keys(map, path, &["type", "selector"], &[]);
                self.selector_field(map, "selector", path);
            }
            Some(other) => self.err(
                &format!("{path}.type"),
                Rule::UnknownVariant,
                format!("`{other}` is not one of mutation_quiet, network_idle, selector_visible"),
            ),
            None => {
                if !map.contains_key("type") {
                    self.err(&format!("{path}.type"), Rule::MissingField, "required field is absent");
                }
            }
        }
    }

    fn fields(&mut self, v: &Value, path: &str) {
        let Some(list) = self.array(v, path) else {
            return;
        };
        if list.is_empty() {
            self.err(path, Rule::Empty, "an extract step needs at least one field");
        }
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, field) in list.iter().enumerate() {
            let at = format!("{path}[{i}]");
            let Some(map) = self.object(field, &at) else {
                continue;
            };
            self.keys(map, &at, &["name", "selector", "capture"], &[]);
            if let Some(name) = self.nonempty(map, "name", &at) {
                if let Some(first) = seen.insert(name, i) {
                    self.err(
                        &format!("{at}.name"),
                        Rule::DuplicateField,
                        format!("field `{name}` already declared at index {first}"),
                    );
                }
            }
            self.selector_field(map, "selector", &at);
            if let Some(capture) = map.get("capture") {
                self.capture(capture, &format!("{at}.capture"));
            }
        }
    }

    fn capture(&mut self, v: &Value, path: &str) {
        match v {
            Value::String(s) if s == "text" => {}
            Value::String(s) => self.err(path, Rule::UnknownVariant, format!("`{s}` is not `text`")),
            Value::Object(map) => {
                self.keys(map, path, &["attribute"], &[]);
                self.nonempty(map, "attribute", path);
            }
            other => self.err(
                path,
                Rule::TypeMismatch,
                format!(
                    "expected \"text\" or {{\"attribute\": name}}, found {}",
                    type_name(other)
                ),
            ),
        }
    }

    fn selector_field(&mut self, map: &Map<String, Value>, key: &str, path: &str) {
        if let Some(v) = map.get(key) {
            self.selector(v, &format!("{path}.{key}"));
        }
    }

    fn selector(&mut self, v: &Value, path: &str) {
        let Some(map) = self.object(v, path) else {
            return;
        };
        self.keys(map, path, &["strategies", "expected_cardinality"], &[]);
        match self.string(map, "expected_cardinality", path) {
            Some("one") | Some("many") | None => {}
            Some(other) => self.err(
                &format!("{path}.expected_cardinality"),
                Rule::UnknownVariant,
                format!("`{other}` is not one of one, many"),
            ),
        }
        let Some(strategies) = map.get("strategies") else {
            return;
        };
        let at = format!("{path}.strategies");
        let Some(list) = self.array(strategies, &at) else {
            return;
        };
        if list.is_empty() {
            self.err(&at, Rule::Empty, "a selector needs at least one strategy");
            return;
        }
        let mut parsed: Vec<Strategy> = Vec::with_capacity(list.len());
        let mut complete = true;
        for (i, s) in list.iter().enumerate() {
            let sp = format!("{at}[{i}]");
            let Some(smap) = self.object(s, &sp) else {
                complete = false;
                continue;
            };
            self.keys(smap, &sp, &["tier", "expression"], &[]);
            let expression = self.nonempty(smap, "expression", &sp);
            let tier = match self.string(smap, "tier", &sp) {
                Some(t) => match Tier::parse(t) {
                    Some(t) => Some(t),
                    None => {
                        self.err(
                            &format!("{sp}.tier"),
                            Rule::UnknownVariant,
                            format!("`{t}` is not one of aria, data_attr, id, stable_class, text, positional"),
                        );
                        None
                    }
                },
                None => None,
            };
            match (tier, expression) {
                (Some(tier), Some(expr)) => parsed.push(Strategy::new(tier, expr)),
                (Some(tier), None) => parsed.push(Strategy::new(tier, "")),
                _ => complete = false,
            }
        }
        if complete {
            match check_tier_order(&parsed) {
                Ok(()) => {}
                Err(TierOrderError::PositionalFirst) => self.err(
                    &at,
                    Rule::PositionalFirst,
                    "positional strategy must not lead when more robust tiers are present",
                ),
                Err(e) => self.err(&at, Rule::TierOrder, e.to_string()),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn absolute_urls() {
        assert!(is_absolute_url("https://example.com/a?b"));
        assert!(is_absolute_url("http://fixture.test"));
        assert!(!is_absolute_url("/relative/path"));
        assert!(!is_absolute_url("mailto:x@y"));
        assert!(!is_absolute_url("https:///nohost"));
        assert!(!is_absolute_url("http://a b"));
    }

    #[test]
    fn non_object_root() {
        let errs = validate(b"[1,2]").unwrap_err();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].rule, Rule::TypeMismatch);
    }

    #[test]
    fn invalid_utf8_is_a_syntax_error() {
        let errs = validate(&[0xff, 0xfe, b'{']).unwrap_err();
        assert_eq!(errs[0].rule, Rule::Syntax);
    }
}
