//! The compiler gateway: the only place that talks to a language model.
//!
//! A compile is one request. A malformed reply is classified and returned,
//! never retried.

mod prompt;
mod transport;

use std::path::Path;
use std::sync::Arc;

use agentc_core::blueprint::{
    check_tier_order, validate_value, Blueprint, Rule, SelectorSpec, SelectorTarget, Step, Strategy, TokenUsage,
    ValidationError,
};
use agentc_core::cost::{account_cost, Price, PriceTable};
use agentc_core::engine::FailureMode;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::dom::SanitizedSkeleton;

pub use prompt::{
    build_compile_prompt, build_heal_prompt, compile_system_text, heal_system_text, ContextBudget, PromptBundle,
    PromptError, PromptMode,
};
pub use transport::{
    CountingTransport, HttpReply, HttpRequest, HttpTransport, StubError, StubResponse, StubTransport, Transport,
    TransportError,
};

/// Prices for the models the benchmark reports, in USD per token.
pub const BUILTIN_PRICES: &str = include_str!("prices.json");

fn default_timeout() -> u64 {
    120_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// A chat-completions URL.
    pub endpoint_url: String,
    pub model_id: String,
    pub price: Price,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    /// Environment variable holding the bearer token, if the endpoint needs one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_output_tokens: Option<u32>,
}

#[derive(Debug, Error)]
pub enum PriceError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("price table: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("model `{0}` has a negative price")]
    Negative(String),
    #[error("model `{0}` is not in the price table")]
    Unknown(String),
}

pub fn parse_price_table(text: &str) -> Result<PriceTable, PriceError> {
    let table: PriceTable = serde_json::from_str(text)?;
    for (model, p) in &table {
        if p.usd_per_input_token.is_sign_negative() || p.usd_per_output_token.is_sign_negative() {
            return Err(PriceError::Negative(model.clone()));
        }
    }
    Ok(table)
}

pub fn load_price_table(path: &Path) -> Result<PriceTable, PriceError> {
    let text = std::fs::read_to_string(path).map_err(|source| PriceError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_price_table(&text)
}

pub fn builtin_price_table() -> PriceTable {
    parse_price_table(BUILTIN_PRICES).expect("bundled price table is valid")
}

pub fn lookup_price(table: &PriceTable, model_id: &str) -> Result<Price, PriceError> {
    table
        .get(model_id)
        .copied()
        .ok_or_else(|| PriceError::Unknown(model_id.to_string()))
}

/// Source of `compiled_at` timestamps.
pub trait Clock: Send + Sync {
    /// RFC 3339, UTC.
    fn now(&self) -> String;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> String {
        chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
    }
}

#[derive(Debug, Clone)]
pub struct FixedClock(pub String);

impl Clock for FixedClock {
    fn now(&self) -> String {
        self.0.clone()
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("environment variable `{0}` holding the API key is not set")]
    MissingApiKey(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed completion envelope: {0}")]
    Envelope(String),
}

/// One model reply, unparsed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub content: String,
    pub finish_reason: String,
    pub usage: TokenUsage,
    pub latency_ms: u64,
}

/// Sends one prompt and unwraps the chat-completions envelope.
pub fn invoke(
    bundle: &PromptBundle,
    config: &ModelConfig,
    transport: &dyn Transport,
) -> Result<Completion, GatewayError> {
    let bearer = match &config.api_key_env_name {
        Some(name) => Some(std::env::var(name).map_err(|_| GatewayError::MissingApiKey(name.clone()))?),
        None => None,
    };
    let mut body = json!({
        "model": config.model_id,
        "temperature": 0,
        "messages": [
            {"role": "system", "content": bundle.system_text},
            {"role": "user", "content": bundle.user_text},
        ],
    });
    if let Some(max) = config.max_output_tokens {
        body["max_tokens"] = json!(max);
    }
    let reply = transport.send(&HttpRequest {
        endpoint: config.endpoint_url.clone(),
        bearer,
        body,
        timeout_ms: config.timeout_ms,
    })?;
    if !(200..300).contains(&reply.status) {
        let mut body = reply.body;
        if body.len() > 512 {
            let cut = (0..=512).rev().find(|&i| body.is_char_boundary(i)).unwrap_or(0);
            body.truncate(cut);
        }
        return Err(GatewayError::Status {
            status: reply.status,
            body,
        });
    }
    parse_envelope(&reply.body, reply.latency_ms)
}

fn parse_envelope(body: &str, latency_ms: u64) -> Result<Completion, GatewayError> {
    let v: Value = serde_json::from_str(body).map_err(|e| GatewayError::Envelope(e.to_string()))?;
    let choice = v
        .pointer("/choices/0")
        .ok_or_else(|| GatewayError::Envelope("no choices".into()))?;
    let content = match choice.pointer("/message/content") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Null) | None => String::new(),
        Some(_) => return Err(GatewayError::Envelope("message content is not text".into())),
    };
    let finish_reason = choice
        .get("finish_reason")
        .and_then(Value::as_str)
        .unwrap_or("stop")
        .to_string();
    let tokens = |key: &str| {
        v.pointer(&format!("/usage/{key}"))
            .and_then(Value::as_u64)
            .ok_or_else(|| GatewayError::Envelope(format!("usage.{key} missing")))
    };
    Ok(Completion {
        content,
        finish_reason,
        usage: TokenUsage::new(tokens("prompt_tokens")?, tokens("completion_tokens")?),
        latency_ms,
    })
}

/// The JSON object inside a reply: the body of the first code fence if
/// there is one, otherwise the span from the first `{` to the last `}` (or
/// to the end, when the reply was cut off).
pub fn extract_json(text: &str) -> &str {
    let mut body = text;
    if let Some(start) = text.find("```") {
        let after = &text[start + 3..];
        let after = after.find('\n').map_or(after, |nl| &after[nl + 1..]);
        body = after.find("```").map_or(after, |end| &after[..end]);
    }
    let Some(open) = body.find(['{', '[']) else {
        return body.trim();
    };
    match body.rfind(['}', ']']) {
        Some(close) if close > open => &body[open..=close],
        _ => body[open..].trim_end(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureClass {
    /// The reply is not a schema-valid blueprint.
    SchemaViolation,
    /// The model ran out of output budget before finishing the blueprint.
    ReasoningExhaustion,
    /// A valid blueprint whose execution did not achieve the intent.
    SemanticMisalignment,
}

impl FailureClass {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureClass::SchemaViolation => "schema_violation",
            FailureClass::ReasoningExhaustion => "reasoning_exhaustion",
            FailureClass::SemanticMisalignment => "semantic_misalignment",
        }
    }
}

/// What is known about a failed compile when classifying it.
#[derive(Debug, Clone, Copy, Default)]
pub struct FailureEvidence<'a> {
    pub finish_reason: Option<&'a str>,
    /// The reply was empty or ended before its JSON closed. Without a
    /// token-limit finish this is still a schema violation.
    pub truncated: bool,
    /// For a blueprint that validated: how its first run ended.
    pub runtime: Option<FailureMode>,
}

pub fn classify_compile_failure(evidence: &FailureEvidence<'_>) -> FailureClass {
    if evidence.runtime.is_some() {
        FailureClass::SemanticMisalignment
    } else if evidence.finish_reason == Some("length") && evidence.truncated {
        FailureClass::ReasoningExhaustion
    } else {
        FailureClass::SchemaViolation
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompileFailure {
    pub class: FailureClass,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<ValidationError>,
    pub raw_output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CompileResult {
    Compiled { blueprint: Blueprint },
    Failed { failure: CompileFailure },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompileOutcome {
    pub result: CompileResult,
    pub token_usage: TokenUsage,
    pub cost_usd: Decimal,
    pub latency_ms: u64,
}

impl CompileOutcome {
    pub fn blueprint(&self) -> Option<&Blueprint> {
        match &self.result {
            CompileResult::Compiled { blueprint } => Some(blueprint),
            CompileResult::Failed { .. } => None,
        }
    }

    pub fn failure(&self) -> Option<&CompileFailure> {
        match &self.result {
            CompileResult::Compiled { .. } => None,
            CompileResult::Failed { failure } => Some(failure),
        }
    }
}

/// A replacement selector proposed by the model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HealOutcome {
    /// The proposal, or why the reply was unusable.
    pub selector: Result<SelectorSpec, String>,
    pub token_usage: TokenUsage,
    pub cost_usd: Decimal,
    pub latency_ms: u64,
}

/// A model endpoint plus everything needed to call it.
#[derive(Clone)]
pub struct Gateway {
    pub config: ModelConfig,
    pub budget: ContextBudget,
    transport: Arc<dyn Transport>,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("config", &self.config)
            .field("budget", &self.budget)
            .finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(config: ModelConfig, transport: Arc<dyn Transport>) -> Self {
        Gateway {
            config,
            budget: ContextBudget::default(),
            transport,
            clock: Arc::new(SystemClock),
        }
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_budget(mut self, budget: ContextBudget) -> Self {
        self.budget = budget;
        self
    }

    /// One-shot compile of a sanitized page into a validated blueprint.
    pub fn compile(
        &self,
        skeleton: &SanitizedSkeleton,
        url: &str,
        intent: &str,
    ) -> Result<CompileOutcome, GatewayError> {
        let bundle = build_compile_prompt(skeleton, url, intent, self.budget)?;
        let completion = invoke(&bundle, &self.config, self.transport.as_ref())?;
        let cost_usd = account_cost(completion.usage, &self.config.price);
        let result = self.interpret(&completion, url, intent);
        Ok(CompileOutcome {
            result,
            token_usage: completion.usage,
            cost_usd,
            latency_ms: completion.latency_ms,
        })
    }

    fn interpret(&self, completion: &Completion, url: &str, intent: &str) -> CompileResult {
        let raw = &completion.content;
        let fail = |class, detail: String, errors| CompileResult::Failed {
            failure: CompileFailure {
                class,
                detail,
                errors,
                raw_output: raw.clone(),
            },
        };
        let text = extract_json(raw);
        let mut value: Value = match serde_json::from_str(text) {
            Ok(v) => v,
            Err(e) => {
                let evidence = FailureEvidence {
                    finish_reason: Some(&completion.finish_reason),
                    truncated: text.is_empty() || e.is_eof(),
                    runtime: None,
                };
                let error = ValidationError {
                    path: "$".into(),
                    rule: Rule::Syntax,
                    detail: e.to_string(),
                };
                return fail(classify_compile_failure(&evidence), e.to_string(), vec![error]);
            }
        };
        if let Some(obj) = value.as_object_mut() {
            obj.insert(
                "meta".into(),
                json!({
                    "intent": intent,
                    "source_url": url,
                    "compiled_at": self.clock.now(),
                    "model_id": self.config.model_id,
                    "token_usage": completion.usage,
                }),
            );
        }
        match validate_value(&value, false) {
            Ok(blueprint) => CompileResult::Compiled { blueprint },
            Err(errors) => {
                let evidence = FailureEvidence {
                    finish_reason: Some(&completion.finish_reason),
                    truncated: false,
                    runtime: None,
                };
                let detail = format!("{} validation error(s); first: {}", errors.len(), errors[0]);
                fail(classify_compile_failure(&evidence), detail, errors)
            }
        }
    }

    /// Asks for a replacement for one broken selector.
    pub fn heal(
        &self,
        step: &Step,
        target: &SelectorTarget,
        original: &SelectorSpec,
        skeleton: &SanitizedSkeleton,
    ) -> Result<HealOutcome, GatewayError> {
        let bundle = build_heal_prompt(step, target, original, skeleton, self.budget)?;
        let completion = invoke(&bundle, &self.config, self.transport.as_ref())?;
        Ok(HealOutcome {
            selector: parse_selector_reply(&completion.content, original),
            token_usage: completion.usage,
            cost_usd: account_cost(completion.usage, &self.config.price),
            latency_ms: completion.latency_ms,
        })
    }
}

/// Accepts a full selector object, `{"strategies": [...]}` or a bare strategy
/// array. The original cardinality always wins.
pub fn parse_selector_reply(text: &str, original: &SelectorSpec) -> Result<SelectorSpec, String> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Reply {
        Bare(Vec<Strategy>),
        Object {
            #[serde(alias = "strategy_list")]
            strategies: Vec<Strategy>,
        },
    }
    let reply: Reply = serde_json::from_str(extract_json(text)).map_err(|e| format!("unparseable selector: {e}"))?;
    let strategies = match reply {
        Reply::Bare(s) | Reply::Object { strategies: s } => s,
    };
    if strategies.is_empty() {
        return Err("no strategies".into());
    }
    check_tier_order(&strategies).map_err(|e| e.to_string())?;
    Ok(SelectorSpec {
        strategies,
        expected_cardinality: original.expected_cardinality,
    })
}
