use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::resolve::ResolutionFailure;
use super::Frame;
use crate::blueprint::{SelectorSpec, SelectorTarget};

/// Why a run stopped, in terms the replanner dispatches on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureMode {
    /// A selector no longer resolves: the page structure moved.
    UiChanged,
    /// Latency, a render timeout, a navigation error or a modal got in the way.
    ExecutionBroke,
    /// Everything ran but the extracted data breaks its declared shape.
    PlanFailed,
}

impl FailureMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureMode::UiChanged => "ui_changed",
            FailureMode::ExecutionBroke => "execution_broke",
            FailureMode::PlanFailed => "plan_failed",
        }
    }
}

/// The concrete event that halted a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum HaltCause {
    Resolution {
        failure: ResolutionFailure,
    },
    OptionMissing {
        label: String,
    },
    WaitTimeout {
        condition: String,
        timeout_ms: u64,
    },
    UnexpectedModal,
    Navigation {
        message: String,
    },
    Backend {
        message: String,
    },
    RuntimeBudget {
        elapsed_ms: u64,
    },
    MissingPayload {
        field: String,
    },
    EmptyFields {
        dataset: String,
        record: usize,
        fields: Vec<String>,
    },
}

impl HaltCause {
    pub fn describe(&self) -> String {
        match self {
            HaltCause::Resolution { failure } => {
                let counts: Vec<String> = failure
                    .tried
                    .iter()
                    .map(|t| format!("{}:{}={}", t.tier, t.expression, t.matches))
                    .collect();
                format!(
                    "selector did not resolve to {:?} (tried {})",
                    failure.expected,
                    counts.join(", ")
                )
            }
            HaltCause::OptionMissing { label } => format!("no option labelled `{label}`"),
            HaltCause::WaitTimeout { condition, timeout_ms } => {
                format!("{condition} not reached within {timeout_ms} ms")
            }
            HaltCause::UnexpectedModal => "a dialog appeared over the page".into(),
            HaltCause::Navigation { message } => format!("navigation failed: {message}"),
            HaltCause::Backend { message } => format!("backend error: {message}"),
            HaltCause::RuntimeBudget { elapsed_ms } => {
                format!("run exceeded its budget after {elapsed_ms} ms")
            }
            HaltCause::MissingPayload { field } => format!("payload has no field `{field}`"),
            HaltCause::EmptyFields {
                dataset,
                record,
                fields,
            } => format!(
                "record {record} of `{dataset}` has empty required fields: {}",
                fields.join(", ")
            ),
        }
    }
}

/// Maps a halting event to its failure mode.
pub fn classify_runtime_failure(cause: &HaltCause) -> FailureMode {
    match cause {
        HaltCause::Resolution { .. } | HaltCause::OptionMissing { .. } => FailureMode::UiChanged,
        HaltCause::WaitTimeout { .. }
        | HaltCause::UnexpectedModal
        | HaltCause::Navigation { .. }
        | HaltCause::Backend { .. }
        | HaltCause::RuntimeBudget { .. } => FailureMode::ExecutionBroke,
        HaltCause::MissingPayload { .. } | HaltCause::EmptyFields { .. } => FailureMode::PlanFailed,
    }
}

/// Everything the healer needs about a halt, and nothing else.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HaltReport {
    pub step_id: String,
    pub failure_mode: FailureMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selector: Option<SelectorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selector_target: Option<SelectorTarget>,
    /// Sanitized page at the moment of the halt.
    pub dom_snapshot: String,
    pub message: String,
    /// Session clock, in milliseconds.
    pub timestamp_ms: u64,
    pub url: String,
    /// Position to restart from.
    pub cursor: Vec<Frame>,
    pub cause: HaltCause,
}
