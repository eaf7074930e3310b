use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::backend::{BrowserBackend, NodeHandle};
use crate::blueprint::{Cardinality, SelectorSpec, Tier};

const TEXT_MARKER: &str = ">> text=";

/// The strategy that won and what it matched.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resolved {
    pub handles: Vec<NodeHandle>,
    pub tier: Tier,
    pub strategy_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriedStrategy {
    pub tier: Tier,
    pub expression: String,
    pub matches: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolutionFailure {
    pub expected: Cardinality,
    pub tried: Vec<TriedStrategy>,
}

impl ResolutionFailure {
    /// No strategy matched anything (as opposed to matching ambiguously).
    pub fn nothing_matched(&self) -> bool {
        self.tried.iter().all(|t| t.matches == 0)
    }
}

/// Splits `css >> text=Label` into the CSS part and the exact text filter.
pub fn split_text_filter(expression: &str) -> (&str, Option<&str>) {
    match expression.find(TEXT_MARKER) {
        Some(at) => (
            expression[..at].trim(),
            Some(expression[at + TEXT_MARKER.len()..].trim()),
        ),
        None => (expression.trim(), None),
    }
}

/// Collapses whitespace runs to single spaces and trims.
pub fn normalize_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for word in s.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Tries strategies strictly in order. The first whose match count fits
/// the expected cardinality wins: exactly one for `one`, at least one for
/// `many`. Several matches where one is expected is a failure, never a
/// first-match pick.
pub fn resolve_selector<B: BrowserBackend + ?Sized>(
    spec: &SelectorSpec,
    backend: &mut B,
    scope: Option<NodeHandle>,
) -> Result<Resolved, ResolutionFailure> {
    let mut tried = Vec::with_capacity(spec.strategies.len());
    for (index, strategy) in spec.strategies.iter().enumerate() {
        let (css, text) = split_text_filter(&strategy.expression);
        let found = backend.query(css, scope).and_then(|handles| match text {
            None => Ok(handles),
            Some(label) => {
                let mut kept = Vec::new();
                for h in handles {
                    if normalize_text(&backend.read_text(h)?) == label {
                        kept.push(h);
                    }
                }
                Ok(kept)
            }
        });
        let handles = match found {
            Ok(h) => h,
            Err(e) => {
                tried.push(TriedStrategy {
                    tier: strategy.tier,
                    expression: strategy.expression.clone(),
                    matches: 0,
                    error: Some(e.to_string()),
                });
                continue;
            }
        };
        let fits = match spec.expected_cardinality {
            Cardinality::One => handles.len() == 1,
            Cardinality::Many => !handles.is_empty(),
        };
        if fits {
            return Ok(Resolved {
                handles,
                tier: strategy.tier,
                strategy_index: index,
            });
        }
        tried.push(TriedStrategy {
            tier: strategy.tier,
            expression: strategy.expression.clone(),
            matches: handles.len(),
            error: None,
        });
    }
    Err(ResolutionFailure {
        expected: spec.expected_cardinality,
        tried,
    })
}
